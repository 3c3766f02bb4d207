#include "persona/ingest.hpp"

#include "persona/synth.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace persona;
using namespace persona::ingest;

namespace {

struct Row {
  int success = 1;
  double au_r = 0.0;  // value for every intensity column
  double au_c = 0.0;  // value for every presence column
  double gaze = 0.0;  // value for every gaze column
  double pose = 0.0;  // value for every pose column
};

std::string openface_header() {
  std::ostringstream os;
  os << "frame, timestamp, confidence, success";
  for (const auto& c : openface_au_intensity_columns()) os << ", " << c;
  for (const auto& c : openface_au_presence_columns()) os << ", " << c;
  for (const auto& c : openface_gaze_columns()) os << ", " << c;
  for (const auto& c : openface_pose_columns()) os << ", " << c;
  return os.str();
}

void write_csv(const std::string& path, const std::vector<Row>& rows) {
  std::ofstream f(path);
  f << openface_header() << "\n";
  int frame = 1;
  for (const auto& r : rows) {
    f << frame++ << ", " << 0.04 * frame << ", 0.93, " << r.success;
    for (int i = 0; i < 17; ++i) f << ", " << r.au_r;
    for (int i = 0; i < 18; ++i) f << ", " << r.au_c;
    for (int i = 0; i < 6; ++i) f << ", " << r.gaze;
    for (int i = 0; i < 6; ++i) f << ", " << r.pose;
    f << "\n";
  }
}

void write_pcm16_wav(const std::string& path, const std::vector<std::int16_t>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  auto put_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  const auto data_size = static_cast<std::uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(1);
  put_u16(1);
  put_u32(static_cast<std::uint32_t>(sample_rate));
  put_u32(static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_size);
  f.write(reinterpret_cast<const char*>(samples.data()), data_size);
}

}  // namespace

TEST_CASE("parse_openface_csv: zero AU columns give a 2x35 zero matrix") {
  testsupport::TempDir tmp("openface_zero");
  const std::string path = tmp.file("a.csv");
  write_csv(path, {Row{}, Row{}});
  const OpenFaceResult r = parse_openface_csv(path, "P001", "S1_talk", Task::Talk, 25.0);
  CHECK(r.action_units.data.rows() == 2);
  CHECK(r.action_units.data.cols() == 35);
  CHECK(r.action_units.data.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(r.gaze.data.cols() == 6);
  CHECK(r.head_pose.data.cols() == 6);
  CHECK(r.gaze.data.rows() == 2);
  CHECK(r.failed_frames == 0);
}

TEST_CASE("parse_openface_csv: failed frame interpolates to the midpoint") {
  testsupport::TempDir tmp("openface_interp");
  const std::string path = tmp.file("a.csv");
  Row lo, mid, hi;
  lo.au_r = 1.0;
  lo.gaze = 1.0;
  lo.pose = 1.0;
  mid.success = 0;
  mid.au_r = 99.0;  // garbage in failed frames must be ignored
  mid.gaze = 99.0;
  mid.pose = 99.0;
  hi.au_r = 3.0;
  hi.gaze = 3.0;
  hi.pose = 3.0;
  write_csv(path, {lo, mid, hi});
  const OpenFaceResult r = parse_openface_csv(path, "P001", "S1_talk", Task::Talk, 25.0);
  CHECK(r.failed_frames == 1);
  CHECK(r.action_units.data(1, 0) == doctest::Approx(2.0));
  CHECK(r.gaze.data(1, 3) == doctest::Approx(2.0));
  CHECK(r.head_pose.data(1, 5) == doctest::Approx(2.0));

  // Interpolation stays within the successful-frame range per channel.
  for (Eigen::Index c = 0; c < 17; ++c) {
    CHECK(r.action_units.data(1, c) >= 1.0);
    CHECK(r.action_units.data(1, c) <= 3.0);
  }
}

TEST_CASE("parse_openface_csv: edge failures hold the nearest successful value") {
  testsupport::TempDir tmp("openface_edges");
  const std::string path = tmp.file("a.csv");
  Row bad_first, good, bad_last;
  bad_first.success = 0;
  bad_first.gaze = -50.0;
  good.gaze = 2.5;
  bad_last.success = 0;
  bad_last.gaze = 50.0;
  write_csv(path, {bad_first, good, bad_last});
  const OpenFaceResult r = parse_openface_csv(path, "P001", "S1_talk", Task::Talk, 25.0);
  CHECK(r.gaze.data(0, 0) == doctest::Approx(2.5));
  CHECK(r.gaze.data(2, 0) == doctest::Approx(2.5));
}

TEST_CASE("parse_openface_csv: presence channels stay binary after interpolation") {
  testsupport::TempDir tmp("openface_presence");
  const std::string path = tmp.file("a.csv");
  Row on, off, gap;
  on.au_c = 1.0;
  off.au_c = 0.0;
  gap.success = 0;
  write_csv(path, {on, gap, off, gap, on});
  const OpenFaceResult r = parse_openface_csv(path, "P001", "S1_talk", Task::Talk, 25.0);
  for (Eigen::Index t = 0; t < r.action_units.data.rows(); ++t) {
    for (Eigen::Index c = 17; c < 35; ++c) {
      const double v = r.action_units.data(t, c);
      CHECK((v == 0.0 || v == 1.0));
    }
  }
  r.action_units.validate();
}

TEST_CASE("parse_openface_csv: intensity values clamp into [0,5] with a counter") {
  testsupport::TempDir tmp("openface_clamp");
  const std::string path = tmp.file("a.csv");
  Row hot;
  hot.au_r = 6.5;
  write_csv(path, {hot, hot});
  const OpenFaceResult r = parse_openface_csv(path, "P001", "S1_talk", Task::Talk, 25.0);
  CHECK(r.action_units.data.leftCols(17).maxCoeff() == doctest::Approx(5.0));
  CHECK(r.clamped_cells == 2 * 17);
}

TEST_CASE("parse_openface_csv error paths") {
  testsupport::TempDir tmp("openface_errors");

  SUBCASE("missing column") {
    const std::string path = tmp.file("missing.csv");
    std::ofstream f(path);
    f << "frame, success, AU01_r\n1, 1, 0.0\n";
    f.close();
    try {
      parse_openface_csv(path, "P", "S_talk", Task::Talk, 25.0);
      FAIL("expected missing_column");
    } catch (const Error& e) {
      CHECK(e.code() == errc::missing_column);
    }
  }

  SUBCASE("empty file") {
    const std::string path = tmp.file("empty.csv");
    std::ofstream f(path);
    f.close();
    try {
      parse_openface_csv(path, "P", "S_talk", Task::Talk, 25.0);
      FAIL("expected empty_file");
    } catch (const Error& e) {
      CHECK(e.code() == errc::empty_file);
    }
  }

  SUBCASE("header only counts as empty") {
    const std::string path = tmp.file("header_only.csv");
    std::ofstream f(path);
    f << openface_header() << "\n";
    f.close();
    try {
      parse_openface_csv(path, "P", "S_talk", Task::Talk, 25.0);
      FAIL("expected empty_file");
    } catch (const Error& e) {
      CHECK(e.code() == errc::empty_file);
    }
  }

  SUBCASE("all frames failed") {
    const std::string path = tmp.file("failed.csv");
    Row bad;
    bad.success = 0;
    write_csv(path, {bad, bad, bad});
    try {
      parse_openface_csv(path, "P", "S_talk", Task::Talk, 25.0);
      FAIL("expected all_frames_failed");
    } catch (const Error& e) {
      CHECK(e.code() == errc::all_frames_failed);
    }
  }
}

TEST_CASE("parse_openface_csv is deterministic on identical bytes") {
  testsupport::TempDir tmp("openface_det");
  const std::string path = tmp.file("a.csv");
  std::mt19937_64 rng(41);
  std::vector<Row> rows;
  for (int i = 0; i < 60; ++i) {
    Row r;
    r.success = (rng() % 5) != 0;
    r.au_r = static_cast<double>(rng() % 500) / 100.0;
    r.au_c = static_cast<double>(rng() % 2);
    r.gaze = static_cast<double>(rng() % 1000) / 250.0 - 2.0;
    r.pose = static_cast<double>(rng() % 1000) / 10.0;
    rows.push_back(r);
  }
  rows[0].success = 1;
  write_csv(path, rows);
  const OpenFaceResult a = parse_openface_csv(path, "P", "S_talk", Task::Talk, 25.0);
  const OpenFaceResult b = parse_openface_csv(path, "P", "S_talk", Task::Talk, 25.0);
  CHECK(a.action_units.data == b.action_units.data);
  CHECK(a.gaze.data == b.gaze.data);
  CHECK(a.head_pose.data == b.head_pose.data);
}

TEST_CASE("ingest_audio: all-zero waveform gives the zero log-energy series") {
  testsupport::TempDir tmp("audio_zero");
  const std::string path = tmp.file("a.wav");
  write_pcm16_wav(path, std::vector<std::int16_t>(800, 0), 200);
  const ModalitySeries s = ingest_audio(path, 25.0);
  CHECK(s.data.rows() == 100);  // 800 samples / (200/25)
  CHECK(s.data.cols() == 1);
  CHECK(s.data.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("ingest_audio: constant amplitude gives a constant series") {
  testsupport::TempDir tmp("audio_const");
  const std::string path = tmp.file("a.wav");
  write_pcm16_wav(path, std::vector<std::int16_t>(800, 8192), 200);
  const ModalitySeries s = ingest_audio(path, 25.0);
  const double first = s.data(0, 0);
  CHECK(first > 0.0);
  for (Eigen::Index i = 1; i < s.data.rows(); ++i) CHECK(s.data(i, 0) == doctest::Approx(first).epsilon(1e-12));
}

TEST_CASE("ingest_audio: random waveform matches the windowed-energy oracle") {
  testsupport::TempDir tmp("audio_oracle");
  const std::string path = tmp.file("a.wav");
  std::mt19937_64 rng(43);
  std::uniform_int_distribution<int> dist(-30000, 30000);
  const int sr = 320;
  const double fr = 20.0;  // 16 samples per frame
  std::vector<std::int16_t> samples(1000);
  for (auto& s : samples) s = static_cast<std::int16_t>(dist(rng));
  write_pcm16_wav(path, samples, sr);

  const ModalitySeries s = ingest_audio(path, fr);
  const int window = 16;
  const auto n_frames = static_cast<Eigen::Index>(samples.size() / static_cast<size_t>(window));
  REQUIRE(s.data.rows() == n_frames);
  for (Eigen::Index i = 0; i < n_frames; ++i) {
    double energy = 0.0;
    for (int t = 0; t < window; ++t) {
      const double v = samples[static_cast<size_t>(i) * 16 + static_cast<size_t>(t)] / 32768.0;
      energy += v * v;
    }
    CHECK(s.data(i, 0) == doctest::Approx(std::log1p(energy)).epsilon(1e-6));
  }
}

TEST_CASE("ingest_audio: one-column CSV passes through") {
  testsupport::TempDir tmp("audio_csv");
  const std::string path = tmp.file("a.csv");
  std::ofstream f(path);
  f << "0.5\n1.5\n2.5\n";
  f.close();
  const ModalitySeries s = ingest_audio(path, 25.0);
  REQUIRE(s.data.rows() == 3);
  CHECK(s.data(1, 0) == doctest::Approx(1.5));
}

TEST_CASE("ingest_audio error paths") {
  testsupport::TempDir tmp("audio_errors");

  SUBCASE("unsupported extension") {
    const std::string path = tmp.file("a.mp3");
    std::ofstream(path) << "junk";
    try {
      ingest_audio(path, 25.0);
      FAIL("expected unsupported_format");
    } catch (const Error& e) {
      CHECK(e.code() == errc::unsupported_format);
    }
  }

  SUBCASE("not a RIFF file") {
    const std::string path = tmp.file("a.wav");
    std::ofstream(path) << "definitely not a wav";
    try {
      ingest_audio(path, 25.0);
      FAIL("expected unsupported_format");
    } catch (const Error& e) {
      CHECK(e.code() == errc::unsupported_format);
    }
  }

  SUBCASE("too short for two frames") {
    const std::string path = tmp.file("short.wav");
    write_pcm16_wav(path, std::vector<std::int16_t>(10, 0), 200);
    try {
      ingest_audio(path, 25.0);
      FAIL("expected empty_audio");
    } catch (const Error& e) {
      CHECK(e.code() == errc::empty_audio);
    }
  }
}

TEST_CASE("load_manifest: empty session list is a valid manifest") {
  testsupport::TempDir tmp("manifest_empty");
  std::ofstream(tmp.file("labels.csv")) << "participant_id\n";
  std::ofstream(tmp.file("manifest.json")) << R"({
    "version": 1, "frame_rate": 25.0,
    "participants": [], "sessions": []
  })";
  const DatasetManifest m = load_manifest(tmp.file("manifest.json"));
  CHECK(m.sessions.empty());
  CHECK(m.participants.empty());
  CHECK(m.frame_rate == doctest::Approx(25.0));
}

TEST_CASE("load_manifest error paths") {
  testsupport::TempDir tmp("manifest_errors");
  std::ofstream(tmp.file("labels.csv")) << "participant_id,item_01\nP001,3\nP002,4\n";
  write_csv(tmp.file("a.csv"), {Row{}, Row{}});
  write_pcm16_wav(tmp.file("a.wav"), std::vector<std::int16_t>(800, 0), 200);

  auto manifest_with_session = [&](const std::string& openface, const std::string& extra_session) {
    std::ostringstream os;
    os << R"({"version": 1, "frame_rate": 25.0,
      "participants": [{"id": "P001", "age": 30, "gender": "F"},
                        {"id": "P002", "age": 40, "gender": "M"}],
      "sessions": [
        {"session_id": "S1_talk", "task": "talk", "target_id": "P001", "partner_id": "P002",
         "files": {"target": {"openface": ")"
       << openface << R"(", "audio": "a.wav"},
                    "partner": {"openface": "a.csv", "audio": "a.wav"}}})"
       << extra_session << "]}";
    return os.str();
  };

  SUBCASE("dangling reference") {
    std::ofstream(tmp.file("manifest.json")) << manifest_with_session("nonexistent.csv", "");
    try {
      load_manifest(tmp.file("manifest.json"));
      FAIL("expected dangling_reference");
    } catch (const Error& e) {
      CHECK(e.code() == errc::dangling_reference);
    }
  }

  SUBCASE("duplicate session id") {
    const std::string dup = R"(,
        {"session_id": "S1_talk", "task": "ghost", "target_id": "P001", "partner_id": "P002",
         "files": {"target": {"openface": "a.csv", "audio": "a.wav"},
                    "partner": {"openface": "a.csv", "audio": "a.wav"}}})";
    std::ofstream(tmp.file("manifest.json")) << manifest_with_session("a.csv", dup);
    try {
      load_manifest(tmp.file("manifest.json"));
      FAIL("expected duplicate_session");
    } catch (const Error& e) {
      CHECK(e.code() == errc::duplicate_session);
    }
  }

  SUBCASE("missing label row") {
    std::ofstream(tmp.file("labels.csv")) << "participant_id,item_01\nP001,3\n";
    std::ofstream(tmp.file("manifest.json")) << manifest_with_session("a.csv", "");
    try {
      load_manifest(tmp.file("manifest.json"));
      FAIL("expected missing_label_row");
    } catch (const Error& e) {
      CHECK(e.code() == errc::missing_label_row);
    }
  }
}

TEST_CASE("load_manifest on a synth-generated dataset of 8 sessions") {
  testsupport::TempDir tmp("manifest_synth");
  synth::SynthSpec spec;
  spec.n_participants = 16;
  spec.sessions_per_participant = 1;
  spec.frames = 32;
  spec.audio_sample_rate = 400;
  spec.tasks = {Task::Lego};
  spec.seed = 404;
  const std::string manifest_path = synth::generate_dataset(spec, testsupport::default_key(), tmp.path());
  const DatasetManifest m = load_manifest(manifest_path);
  CHECK(m.sessions.size() == 8);  // 16 participants paired once
  std::set<std::string> ids;
  for (const auto& s : m.sessions) {
    ids.insert(s.target_id);
    ids.insert(s.partner_id);
  }
  CHECK(ids.size() <= 16);

  // Sessions load and validate end to end.
  const SessionRecord rec = load_session(m, m.sessions[0]);
  CHECK(rec.target.series[0].data.rows() == 32);
}
