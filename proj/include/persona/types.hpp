#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace persona {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error codes for every failure mode the library reports. Tests match on the
// code, messages are for humans.
enum class errc {
  // ingest
  missing_column,
  empty_file,
  all_frames_failed,
  unsupported_format,
  empty_audio,
  dangling_reference,
  duplicate_session,
  missing_label_row,
  bad_manifest,
  // spectral
  too_short,
  // bfi2
  out_of_range,
  level_mismatch,
  empty_list,
  mixed_levels,
  bad_cardinality,
  duplicate_item,
  // nn
  shape_mismatch,
  non_finite,
  // train
  length_mismatch,
  empty_split,
  non_finite_loss,
  invalid_bounds,
  // eval
  too_few_subjects,
  too_few_participants,
  missing_participant,
  non_positive_reference,
  // generic
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& msg) { throw Error(code, msg); }

enum class Modality { ActionUnits, Gaze, HeadPose, Audio };
enum class Task { Talk, Ghost, Lego, Animals };

inline constexpr int kModalityCount = 4;
inline constexpr Modality kAllModalities[kModalityCount] = {
    Modality::ActionUnits, Modality::Gaze, Modality::HeadPose, Modality::Audio};
inline constexpr Task kAllTasks[4] = {Task::Talk, Task::Ghost, Task::Lego, Task::Animals};

constexpr int channel_count(Modality m) {
  switch (m) {
    case Modality::ActionUnits: return 35;
    case Modality::Gaze: return 6;
    case Modality::HeadPose: return 6;
    case Modality::Audio: return 1;
  }
  return 0;
}

std::string to_string(Modality m);
std::string to_string(Task t);
Task task_from_string(const std::string& s);
Modality modality_from_string(const std::string& s);

// Variable-length per-frame channel matrix for one modality of one participant
// in one task video. data is frames x channels.
struct ModalitySeries {
  Modality modality = Modality::ActionUnits;
  double frame_rate = 0.0;
  Matrix data;
  std::string participant_id;
  std::string session_id;
  Task task = Task::Talk;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index channels() const { return data.cols(); }

  // Throws Error on any violated invariant (frame count, channel count,
  // AU value ranges, non-finite entries).
  void validate() const;
};

struct ParticipantBundle {
  std::string participant_id;
  // Indexed in kAllModalities order: ActionUnits, Gaze, HeadPose, Audio.
  std::vector<ModalitySeries> series;
};

// One dyadic task video.
struct SessionRecord {
  std::string session_id;
  Task task = Task::Talk;
  ParticipantBundle target;
  ParticipantBundle partner;

  void validate() const;
};

struct ParticipantInfo {
  std::string id;
  double age = 0.0;
  std::string gender;
};

// Manifest entry: file paths only; actual series are loaded on demand.
struct SessionEntry {
  std::string session_id;
  Task task = Task::Talk;
  std::string target_id;
  std::string partner_id;
  std::string target_openface;  // paths resolved relative to the manifest file
  std::string target_audio;
  std::string partner_openface;
  std::string partner_audio;
};

struct DatasetManifest {
  double frame_rate = 0.0;
  std::vector<ParticipantInfo> participants;
  std::vector<SessionEntry> sessions;
  std::string labels_path;  // resolved absolute path
  std::string base_dir;     // directory of the manifest file

  const ParticipantInfo* find_participant(const std::string& id) const;
};

}  // namespace persona
