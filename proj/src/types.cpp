#include "persona/types.hpp"

#include <cmath>

namespace persona {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::ActionUnits: return "action_units";
    case Modality::Gaze: return "gaze";
    case Modality::HeadPose: return "head_pose";
    case Modality::Audio: return "audio";
  }
  return "?";
}

std::string to_string(Task t) {
  switch (t) {
    case Task::Talk: return "talk";
    case Task::Ghost: return "ghost";
    case Task::Lego: return "lego";
    case Task::Animals: return "animals";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  for (Task t : kAllTasks)
    if (to_string(t) == s) return t;
  raise(errc::bad_manifest, "unknown task: " + s);
}

Modality modality_from_string(const std::string& s) {
  for (Modality m : kAllModalities)
    if (to_string(m) == s) return m;
  raise(errc::bad_manifest, "unknown modality: " + s);
}

void ModalitySeries::validate() const {
  if (frames() < 2) raise(errc::too_short, "series has fewer than 2 frames");
  if (channels() != channel_count(modality))
    raise(errc::shape_mismatch, "series for " + to_string(modality) + " must have " +
                                    std::to_string(channel_count(modality)) + " channels, got " +
                                    std::to_string(channels()));
  if (!(frame_rate > 0.0)) raise(errc::bad_manifest, "frame_rate must be positive");
  if (!data.allFinite()) raise(errc::non_finite, "series contains NaN/Inf");
  if (modality == Modality::ActionUnits) {
    for (Eigen::Index r = 0; r < frames(); ++r) {
      for (Eigen::Index c = 0; c < 17; ++c) {
        const double v = data(r, c);
        if (v < 0.0 || v > 5.0) raise(errc::out_of_range, "AU intensity outside [0,5]");
      }
      for (Eigen::Index c = 17; c < 35; ++c) {
        const double v = data(r, c);
        if (v != 0.0 && v != 1.0) raise(errc::out_of_range, "AU presence outside {0,1}");
      }
    }
  }
}

void SessionRecord::validate() const {
  if (target.participant_id == partner.participant_id)
    raise(errc::bad_manifest, "session " + session_id + ": target and partner must differ");
  for (const auto* bundle : {&target, &partner}) {
    if (bundle->series.size() != kModalityCount)
      raise(errc::bad_manifest, "session " + session_id + ": participant " + bundle->participant_id +
                                    " must carry all four modalities");
    for (int i = 0; i < kModalityCount; ++i) {
      const ModalitySeries& s = bundle->series[static_cast<size_t>(i)];
      if (s.modality != kAllModalities[i]) raise(errc::bad_manifest, "modalities out of order");
      if (s.session_id != session_id || s.task != task)
        raise(errc::bad_manifest, "session " + session_id + ": series session/task mismatch");
      s.validate();
    }
  }
}

const ParticipantInfo* DatasetManifest::find_participant(const std::string& id) const {
  for (const auto& p : participants)
    if (p.id == id) return &p;
  return nullptr;
}

}  // namespace persona
