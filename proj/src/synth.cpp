#include "persona/synth.hpp"

#include "persona/ingest.hpp"
#include "persona/rng.hpp"
#include "persona/spectral.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace persona::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SynthSpec::validate() const {
  if (n_participants < 2) raise(errc::invalid_bounds, "need at least 2 participants");
  if (sessions_per_participant < 1 || sessions_per_participant > 5)
    raise(errc::invalid_bounds, "sessions_per_participant must be in 1..5");
  if (frames < 16) raise(errc::invalid_bounds, "frames must be >= 16");
  if (!(frame_rate > 0.0)) raise(errc::invalid_bounds, "frame_rate must be positive");
  if (audio_sample_rate < 64) raise(errc::invalid_bounds, "audio_sample_rate too low");
  if (!(snr > 0.0)) raise(errc::invalid_bounds, "SNR must be positive");
  if (!(coeff > 0.0)) raise(errc::invalid_bounds, "coeff must be positive");
  if (cross_coeff < 0.0) raise(errc::invalid_bounds, "cross_coeff must be non-negative");
  if (tasks.empty()) raise(errc::invalid_bounds, "task list must not be empty");
}

int SynthSpec::frames_for(Task task) const {
  if (task == Task::Talk && realistic_talk_length)
    return static_cast<int>(std::lround(5.0 * 60.0 * frame_rate));
  return frames;
}

std::string SynthSpec::to_json_string() const {
  json j = {
      {"n_participants", n_participants},
      {"sessions_per_participant", sessions_per_participant},
      {"frames", frames},
      {"frame_rate", frame_rate},
      {"audio_sample_rate", audio_sample_rate},
      {"snr", snr},
      {"coeff", coeff},
      {"cross_coeff", cross_coeff},
      {"realistic_talk_length", realistic_talk_length},
      {"seed", seed},
  };
  j["tasks"] = json::array();
  for (Task t : tasks) j["tasks"].push_back(persona::to_string(t));
  return j.dump(2);
}

SynthSpec SynthSpec::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("synth spec: invalid JSON: ") + e.what());
  }
  SynthSpec s;
  s.n_participants = j.value("n_participants", s.n_participants);
  s.sessions_per_participant = j.value("sessions_per_participant", s.sessions_per_participant);
  s.frames = j.value("frames", s.frames);
  s.frame_rate = j.value("frame_rate", s.frame_rate);
  s.audio_sample_rate = j.value("audio_sample_rate", s.audio_sample_rate);
  s.snr = j.value("snr", s.snr);
  s.coeff = j.value("coeff", s.coeff);
  s.cross_coeff = j.value("cross_coeff", s.cross_coeff);
  s.realistic_talk_length = j.value("realistic_talk_length", s.realistic_talk_length);
  s.seed = j.value("seed", s.seed);
  if (j.contains("tasks")) {
    s.tasks.clear();
    for (const auto& t : j["tasks"]) s.tasks.push_back(task_from_string(t.get<std::string>()));
  }
  s.validate();
  return s;
}

SynthSpec SynthSpec::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise(errc::io_error, "cannot open synth spec: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json_string(ss.str());
}

const std::array<int, 5>& target_peak_bins() {
  static const std::array<int, 5> bins = {8, 20, 32, 44, 56};
  return bins;
}

const std::array<int, 5>& partner_peak_bins() {
  static const std::array<int, 5> bins = {14, 26, 38, 50, 62};
  return bins;
}

namespace {

constexpr int kTraits = 5;

double bin_to_freq(int bin) { return 0.5 * static_cast<double>(bin) / static_cast<double>(spectral::kBins - 1); }

// Fixed planted map: per (channel tag, trait) positive weight and phase,
// derived from the dataset seed only, so every session shares the same map.
struct PlantedChannel {
  std::array<double, kTraits> w;    // own-trait weights
  std::array<double, kTraits> phi;  // own-trait phases
  std::array<double, kTraits> u;    // partner-trait weights
  std::array<double, kTraits> psi;  // partner-trait phases
};

PlantedChannel planted_channel(const SynthSpec& spec, const std::string& tag) {
  std::mt19937_64 rng(derive_seed(spec.seed, "planted-map:" + tag));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * std::numbers::pi);
  PlantedChannel ch;
  for (int j = 0; j < kTraits; ++j) ch.w[static_cast<size_t>(j)] = 0.3 + std::abs(gauss(rng));
  for (int j = 0; j < kTraits; ++j) ch.phi[static_cast<size_t>(j)] = uphase(rng);
  for (int j = 0; j < kTraits; ++j) ch.u[static_cast<size_t>(j)] = 0.3 + std::abs(gauss(rng));
  for (int j = 0; j < kTraits; ++j) ch.psi[static_cast<size_t>(j)] = uphase(rng);
  return ch;
}

// Planted waveform sample for one channel at frame t: own and partner trait
// scores drive sinusoid amplitudes at the fixed trait frequencies.
double planted_value(const PlantedChannel& ch, const Vector& own, const Vector& other, double cross, int t) {
  double v = 0.0;
  for (int j = 0; j < kTraits; ++j) {
    const double fo = bin_to_freq(target_peak_bins()[static_cast<size_t>(j)]);
    v += ch.w[static_cast<size_t>(j)] * own[j] *
         std::sin(2.0 * std::numbers::pi * fo * static_cast<double>(t) + ch.phi[static_cast<size_t>(j)]);
    if (cross > 0.0) {
      const double fp = bin_to_freq(partner_peak_bins()[static_cast<size_t>(j)]);
      v += cross * ch.u[static_cast<size_t>(j)] * other[j] *
           std::sin(2.0 * std::numbers::pi * fp * static_cast<double>(t) + ch.psi[static_cast<size_t>(j)]);
    }
  }
  return v;
}

double planted_norm(const PlantedChannel& ch, double cross, double likert_max = 5.0) {
  double n = 0.0;
  for (int j = 0; j < kTraits; ++j)
    n += likert_max * (ch.w[static_cast<size_t>(j)] + cross * ch.u[static_cast<size_t>(j)]);
  return n;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "0";
  return std::string(buf, ptr);
}

}  // namespace

std::vector<Participant> sample_participants(const SynthSpec& spec, const bfi2::ScoringKey& key) {
  spec.validate();
  std::vector<Participant> roster;
  roster.reserve(static_cast<size_t>(spec.n_participants));
  for (int p = 0; p < spec.n_participants; ++p) {
    std::mt19937_64 rng(derive_seed(spec.seed, "participant:" + std::to_string(p)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> age_dist(18, 60);
    std::bernoulli_distribution coin(0.5);

    Participant out;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "P%03d", p + 1);
    out.info.id = idbuf;
    out.info.age = age_dist(rng);
    out.info.gender = coin(rng) ? "F" : "M";

    Vector latent(kTraits);
    for (int j = 0; j < kTraits; ++j) latent[j] = std::clamp(3.0 + 0.9 * gauss(rng), 1.0, 5.0);

    out.nuances.level = bfi2::Level::Nuance;
    out.nuances.subject = out.info.id;
    out.nuances.scores.resize(key.n_items());
    for (int i = 0; i < key.n_items(); ++i) {
      const int trait = key.facet_to_trait[static_cast<size_t>(key.item_to_facet[static_cast<size_t>(i)])];
      const double construct = std::clamp(std::round(latent[trait] + 0.45 * gauss(rng)), key.likert_min, key.likert_max);
      out.nuances.scores[i] = key.items[static_cast<size_t>(i)].reversed
                                  ? (key.likert_min + key.likert_max) - construct
                                  : construct;
    }
    out.traits = bfi2::nuances_to_traits(out.nuances, key).scores;
    roster.push_back(std::move(out));
  }
  return roster;
}

RenderedBehavior render_behavior(const Participant& self, const Participant& other, Task task,
                                 const SynthSpec& spec, const std::string& session_id) {
  spec.validate();
  const int frames = spec.frames_for(task);
  std::mt19937_64 rng(derive_seed(spec.seed, "session:" + session_id + ":" + self.info.id));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  RenderedBehavior out;
  out.action_units.resize(frames, 35);
  out.gaze.resize(frames, 6);
  out.head_pose.resize(frames, 6);

  const double cross = spec.cross_coeff;

  auto fill_continuous = [&](Eigen::Ref<Matrix> block, const std::string& tag_prefix, int n_channels,
                             double base, double swing, bool clamp05) {
    for (int c = 0; c < n_channels; ++c) {
      const PlantedChannel ch = planted_channel(spec, tag_prefix + std::to_string(c));
      const double scale = swing / planted_norm(ch, cross);
      const double noise_sd = (swing / std::numbers::sqrt2) / spec.snr;
      for (int t = 0; t < frames; ++t) {
        double v = base + scale * planted_value(ch, self.traits, other.traits, cross, t) + noise_sd * gauss(rng);
        if (clamp05) v = std::clamp(v, 0.0, 5.0);
        block(t, c) = v;
      }
    }
  };

  // Intensity AUs: centered in the legal [0,5] band so clamping stays rare.
  fill_continuous(out.action_units.leftCols(17), "au_r:", 17, 2.5, 2.2 * spec.coeff, true);
  fill_continuous(out.gaze, "gaze:", 6, 0.0, 1.0 * spec.coeff, false);
  fill_continuous(out.head_pose, "pose:", 6, 0.0, 1.0 * spec.coeff, false);

  // Presence AUs: duty-cycle-coded square waves on the trait frequency.
  const double flip_prob = std::min(0.25, 0.5 / spec.snr);
  for (int c = 0; c < 18; ++c) {
    const int trait = c % kTraits;
    const double freq = bin_to_freq(target_peak_bins()[static_cast<size_t>(trait)]);
    std::mt19937_64 phase_rng(derive_seed(spec.seed, "planted-map:au_c:" + std::to_string(c)));
    std::uniform_real_distribution<double> uphase(0.0, 1.0);
    const double phase = uphase(phase_rng);
    const double duty = 0.25 + 0.5 * (self.traits[trait] - 1.0) / 4.0;
    for (int t = 0; t < frames; ++t) {
      const double cycle = freq * static_cast<double>(t) + phase;
      double v = (cycle - std::floor(cycle)) < duty ? 1.0 : 0.0;
      if (u01(rng) < flip_prob) v = 1.0 - v;
      out.action_units(t, 17 + c) = v;
    }
  }

  // Audio: a tone whose amplitude envelope follows the planted map; the
  // per-frame log-energy picked up at ingest inherits the modulation.
  {
    const PlantedChannel ch = planted_channel(spec, "audio:0");
    const double scale = 0.35 * spec.coeff / planted_norm(ch, cross);
    const double noise_sd = (0.35 * spec.coeff / std::numbers::sqrt2) / spec.snr * 0.1;
    const auto n_samples = static_cast<size_t>(
        std::llround(static_cast<double>(frames) * static_cast<double>(spec.audio_sample_rate) / spec.frame_rate));
    out.audio_samples.resize(n_samples);
    const double carrier = 440.0;
    for (size_t s = 0; s < n_samples; ++s) {
      const double frame_pos = static_cast<double>(s) * spec.frame_rate / static_cast<double>(spec.audio_sample_rate);
      const double envelope =
          0.5 + scale * planted_value(ch, self.traits, other.traits, cross, static_cast<int>(frame_pos));
      const double wave = envelope * std::sin(2.0 * std::numbers::pi * carrier * static_cast<double>(s) /
                                              static_cast<double>(spec.audio_sample_rate)) +
                          noise_sd * gauss(rng);
      out.audio_samples[s] = static_cast<float>(std::clamp(wave, -1.0, 1.0));
    }
  }
  return out;
}

namespace {

void write_openface_csv(const std::string& path, const RenderedBehavior& b) {
  std::ofstream f(path);
  if (!f) raise(errc::io_error, "cannot write OpenFace CSV: " + path);
  f << "frame,timestamp,confidence,success";
  for (const auto& c : ingest::openface_au_intensity_columns()) f << "," << c;
  for (const auto& c : ingest::openface_au_presence_columns()) f << "," << c;
  for (const auto& c : ingest::openface_gaze_columns()) f << "," << c;
  for (const auto& c : ingest::openface_pose_columns()) f << "," << c;
  f << "\n";
  const auto frames = b.action_units.rows();
  for (Eigen::Index t = 0; t < frames; ++t) {
    f << (t + 1) << "," << format_double(static_cast<double>(t)) << ",0.98,1";
    for (Eigen::Index c = 0; c < 35; ++c) f << "," << format_double(b.action_units(t, c));
    for (Eigen::Index c = 0; c < 6; ++c) f << "," << format_double(b.gaze(t, c));
    for (Eigen::Index c = 0; c < 6; ++c) f << "," << format_double(b.head_pose(t, c));
    f << "\n";
  }
  if (!f) raise(errc::io_error, "short write: " + path);
}

void write_wav_float32(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(errc::io_error, "cannot write WAV: " + path);
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
  };
  const auto data_size = static_cast<std::uint32_t>(samples.size() * sizeof(float));
  f.write("RIFF", 4);
  put_u32(36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(3);  // IEEE float
  put_u16(1);  // mono
  put_u32(static_cast<std::uint32_t>(sample_rate));
  put_u32(static_cast<std::uint32_t>(sample_rate) * 4);
  put_u16(4);
  put_u16(32);
  f.write("data", 4);
  put_u32(data_size);
  f.write(reinterpret_cast<const char*>(samples.data()), static_cast<std::streamsize>(data_size));
  if (!f) raise(errc::io_error, "short WAV write: " + path);
}

// The log-energy series ingest will compute from the written samples.
Matrix expected_audio_series(const std::vector<float>& samples, int sample_rate, double frame_rate) {
  const double samples_per_frame = static_cast<double>(sample_rate) / frame_rate;
  const auto n_frames = static_cast<Eigen::Index>(std::floor(static_cast<double>(samples.size()) / samples_per_frame));
  Matrix out(n_frames, 1);
  for (Eigen::Index i = 0; i < n_frames; ++i) {
    const auto lo = static_cast<size_t>(std::floor(static_cast<double>(i) * samples_per_frame));
    const auto hi = static_cast<size_t>(std::floor(static_cast<double>(i + 1) * samples_per_frame));
    double energy = 0.0;
    for (size_t t = lo; t < hi && t < samples.size(); ++t)
      energy += static_cast<double>(samples[t]) * static_cast<double>(samples[t]);
    out(i, 0) = std::log1p(energy);
  }
  return out;
}

}  // namespace

SessionRecord render_session(const Participant& target, const Participant& partner, Task task,
                             const SynthSpec& spec, const std::string& session_id, const std::string& dir,
                             SessionEntry* entry_out) {
  if (target.info.id == partner.info.id) raise(errc::bad_manifest, "render_session: participants must differ");
  fs::create_directories(dir);

  SessionRecord rec;
  rec.session_id = session_id;
  rec.task = task;

  auto render_side = [&](const Participant& self, const Participant& other) {
    ParticipantBundle bundle;
    bundle.participant_id = self.info.id;
    const RenderedBehavior b = render_behavior(self, other, task, spec, session_id);

    const std::string csv_path = (fs::path(dir) / (self.info.id + ".csv")).string();
    const std::string wav_path = (fs::path(dir) / (self.info.id + ".wav")).string();
    write_openface_csv(csv_path, b);
    write_wav_float32(wav_path, b.audio_samples, spec.audio_sample_rate);

    auto series = [&](Modality m, const Matrix& data) {
      ModalitySeries s;
      s.modality = m;
      s.frame_rate = spec.frame_rate;
      s.data = data;
      s.participant_id = self.info.id;
      s.session_id = session_id;
      s.task = task;
      return s;
    };
    bundle.series.push_back(series(Modality::ActionUnits, b.action_units));
    bundle.series.push_back(series(Modality::Gaze, b.gaze));
    bundle.series.push_back(series(Modality::HeadPose, b.head_pose));
    bundle.series.push_back(
        series(Modality::Audio, expected_audio_series(b.audio_samples, spec.audio_sample_rate, spec.frame_rate)));
    return bundle;
  };

  rec.target = render_side(target, partner);
  rec.partner = render_side(partner, target);
  rec.validate();

  if (entry_out) {
    entry_out->session_id = session_id;
    entry_out->task = task;
    entry_out->target_id = target.info.id;
    entry_out->partner_id = partner.info.id;
    entry_out->target_openface = (fs::path(dir) / (target.info.id + ".csv")).string();
    entry_out->target_audio = (fs::path(dir) / (target.info.id + ".wav")).string();
    entry_out->partner_openface = (fs::path(dir) / (partner.info.id + ".csv")).string();
    entry_out->partner_audio = (fs::path(dir) / (partner.info.id + ".wav")).string();
  }
  return rec;
}

std::string generate_dataset(const SynthSpec& spec, const bfi2::ScoringKey& key, const std::string& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  const std::vector<Participant> roster = sample_participants(spec, key);

  // Labels CSV.
  const std::string labels_path = (fs::path(out_dir) / "labels.csv").string();
  {
    std::ofstream f(labels_path);
    if (!f) raise(errc::io_error, "cannot write labels: " + labels_path);
    f << "participant_id";
    for (const auto& item : key.items) f << "," << item.id;
    f << "\n";
    for (const auto& p : roster) {
      f << p.info.id;
      for (Eigen::Index i = 0; i < p.nuances.scores.size(); ++i)
        f << "," << static_cast<int>(std::llround(p.nuances.scores[i]));
      f << "\n";
    }
  }

  // Dyad meetings via the circle method: every round pairs each participant
  // with a distinct partner; with an odd roster one participant sits a round
  // out.
  const int n = spec.n_participants;
  const int slots = n % 2 == 0 ? n : n + 1;  // last slot is a bye when odd
  std::vector<int> ring(static_cast<size_t>(slots));
  std::iota(ring.begin(), ring.end(), 0);
  {
    std::mt19937_64 rng(derive_seed(spec.seed, "pairing"));
    std::shuffle(ring.begin(), ring.end(), rng);
  }

  json sessions = json::array();
  int meeting_counter = 0;
  for (int round = 0; round < spec.sessions_per_participant; ++round) {
    for (int i = 0; i < slots / 2; ++i) {
      // Circle method: slot 0 fixed, others rotated by the round index.
      auto slot_at = [&](int pos) {
        if (pos == 0) return ring[0];
        return ring[static_cast<size_t>(1 + (pos - 1 + round) % (slots - 1))];
      };
      const int a = slot_at(i);
      const int b = slot_at(slots - 1 - i);
      if (a >= n || b >= n) continue;  // bye slot
      ++meeting_counter;
      char meeting[16];
      std::snprintf(meeting, sizeof(meeting), "S%04d", meeting_counter);

      for (Task task : spec.tasks) {
        const std::string session_id = std::string(meeting) + "_" + persona::to_string(task);
        const std::string session_dir = (fs::path(out_dir) / "sessions" / session_id).string();
        SessionEntry entry;
        render_session(roster[static_cast<size_t>(a)], roster[static_cast<size_t>(b)], task, spec, session_id,
                       session_dir, &entry);
        const std::string rel = (fs::path("sessions") / session_id).string();
        sessions.push_back({{"session_id", entry.session_id},
                            {"task", persona::to_string(entry.task)},
                            {"target_id", entry.target_id},
                            {"partner_id", entry.partner_id},
                            {"files",
                             {{"target",
                               {{"openface", rel + "/" + entry.target_id + ".csv"},
                                {"audio", rel + "/" + entry.target_id + ".wav"}}},
                              {"partner",
                               {{"openface", rel + "/" + entry.partner_id + ".csv"},
                                {"audio", rel + "/" + entry.partner_id + ".wav"}}}}}});
      }
    }
  }

  json participants = json::array();
  for (const auto& p : roster)
    participants.push_back({{"id", p.info.id}, {"age", p.info.age}, {"gender", p.info.gender}});

  const json manifest = {
      {"version", 1},
      {"frame_rate", spec.frame_rate},
      {"labels", "labels.csv"},
      {"participants", participants},
      {"sessions", sessions},
  };
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream mf(manifest_path);
  if (!mf) raise(errc::io_error, "cannot write manifest: " + manifest_path);
  mf << manifest.dump(2) << "\n";
  return manifest_path;
}

}  // namespace persona::synth
