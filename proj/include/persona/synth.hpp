#pragma once

#include "persona/bfi2.hpp"
#include "persona/types.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace persona::synth {

// Seeded generator of dyadic sessions with planted personality-to-behavior
// structure. Trait scores modulate sinusoid amplitudes at fixed per-trait
// frequencies, so the spectral front-end can provably pick the signal up.
struct SynthSpec {
  int n_participants = 40;
  int sessions_per_participant = 2;  // dyad meetings per participant, 1..5
  int frames = 480;                  // frames per task video
  double frame_rate = 25.0;
  int audio_sample_rate = 4000;
  double snr = 10.0;          // planted-signal RMS over noise RMS
  double coeff = 1.0;         // planted channel swing scale
  double cross_coeff = 0.25;  // strength of the partner's modulation
  std::vector<Task> tasks = {Task::Talk, Task::Ghost, Task::Lego, Task::Animals};
  bool realistic_talk_length = false;  // Talk videos stretch to 5 min
  std::uint64_t seed = 0;

  void validate() const;
  int frames_for(Task task) const;

  std::string to_json_string() const;
  static SynthSpec from_json_string(const std::string& text);
  static SynthSpec load(const std::string& path);
};

struct Participant {
  ParticipantInfo info;
  bfi2::PersonalityVector nuances;  // integer ground-truth items
  Vector traits;                    // key-aggregated trait scores (the planted construct)
};

// Roster with trait-linked integer items consistent with the key's reverse
// flags, plus categorical age/gender.
std::vector<Participant> sample_participants(const SynthSpec& spec, const bfi2::ScoringKey& key);

// Interpolated-spectrum bins (out of 80) where each trait's planted sinusoid
// lands, for the participant's own traits and the partner's.
const std::array<int, 5>& target_peak_bins();
const std::array<int, 5>& partner_peak_bins();

// Renders one participant's behavior series for one task video, in memory.
// Exposed for the spectral-argmax and round-trip oracles.
struct RenderedBehavior {
  Matrix action_units;  // frames x 35
  Matrix gaze;          // frames x 6
  Matrix head_pose;     // frames x 6
  std::vector<float> audio_samples;
};
RenderedBehavior render_behavior(const Participant& self, const Participant& other, Task task,
                                 const SynthSpec& spec, const std::string& session_id);

// Writes both participants' OpenFace CSV + WAV files for one dyadic task
// video and returns the record exactly as written (audio series computed from
// the float32-quantized samples).
SessionRecord render_session(const Participant& target, const Participant& partner, Task task,
                             const SynthSpec& spec, const std::string& session_id, const std::string& dir,
                             SessionEntry* entry_out = nullptr);

// Full dataset under out_dir: manifest.json, labels.csv and per-session
// files. Returns the manifest path.
std::string generate_dataset(const SynthSpec& spec, const bfi2::ScoringKey& key, const std::string& out_dir);

}  // namespace persona::synth
