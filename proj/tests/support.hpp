#pragma once

#include "persona/bfi2.hpp"
#include "persona/types.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace testsupport {

inline std::string data_dir() { return PERSONA_DATA_DIR; }

inline std::string default_key_path() { return data_dir() + "/bfi2_key.json"; }

inline persona::bfi2::ScoringKey default_key() {
  return persona::bfi2::load_scoring_key(default_key_path());
}

// Fresh scratch directory under the build tree's temp space.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = (std::filesystem::temp_directory_path() /
             ("persona_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++)))
                .string();
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return (std::filesystem::path(path_) / name).string(); }

 private:
  std::string path_;
};

// Mini scoring key: 2 facets x 2 items (one reversed), 1 trait per facet.
inline persona::bfi2::ScoringKey mini_key() {
  const char* text = R"({
    "likert": {"min": 1, "max": 5},
    "traits": ["T1", "T2"],
    "facets": [{"id": "f1", "trait": "T1"}, {"id": "f2", "trait": "T2"}],
    "items": [
      {"id": "i1", "facet": "f1", "reversed": false},
      {"id": "i2", "facet": "f1", "reversed": true},
      {"id": "i3", "facet": "f2", "reversed": false},
      {"id": "i4", "facet": "f2", "reversed": false}
    ]
  })";
  return persona::bfi2::parse_scoring_key(text, false);
}

inline persona::bfi2::PersonalityVector random_nuances(const persona::bfi2::ScoringKey& key,
                                                       std::mt19937_64& rng) {
  persona::bfi2::PersonalityVector v;
  v.level = persona::bfi2::Level::Nuance;
  v.scores.resize(key.n_items());
  std::uniform_int_distribution<int> likert(static_cast<int>(key.likert_min), static_cast<int>(key.likert_max));
  for (int i = 0; i < key.n_items(); ++i) v.scores[i] = likert(rng);
  return v;
}

}  // namespace testsupport
