#pragma once

#include "persona/types.hpp"

#include <string>
#include <vector>

namespace persona::ingest {

// Visual modalities from one OpenFace 2.0 CSV plus ingestion counters.
struct OpenFaceResult {
  ModalitySeries action_units;  // 35 channels: 17 intensities then 18 presences
  ModalitySeries gaze;          // 6 channels: two 3-D eye vectors
  ModalitySeries head_pose;     // 6 channels: Tx Ty Tz Rx Ry Rz
  int failed_frames = 0;        // rows with success=0, gap-filled by interpolation
  int clamped_cells = 0;        // values pulled back into their legal range
};

// Parses per-frame OpenFace output. Frames with success=0 are replaced by
// linear interpolation between the nearest successful neighbors (edge frames
// hold the nearest value); presence channels are rounded back to {0,1}.
OpenFaceResult parse_openface_csv(const std::string& path, const std::string& participant_id,
                                  const std::string& session_id, Task task, double frame_rate);

// Per-video-frame log-energy series from a mono waveform (PCM16 or float32
// WAV), or a pass-through of a precomputed one-column CSV.
ModalitySeries ingest_audio(const std::string& path, double frame_rate,
                            const std::string& participant_id = "", const std::string& session_id = "",
                            Task task = Task::Talk);

// Loads and validates a dataset manifest: referenced files exist, session ids
// unique, every referenced participant is listed and has a label row.
DatasetManifest load_manifest(const std::string& path);

// Loads all eight ModalitySeries of one manifest session.
SessionRecord load_session(const DatasetManifest& manifest, const SessionEntry& entry);

// The exact OpenFace column names this parser requires, in channel order.
const std::vector<std::string>& openface_au_intensity_columns();  // 17
const std::vector<std::string>& openface_au_presence_columns();   // 18
const std::vector<std::string>& openface_gaze_columns();          // 6
const std::vector<std::string>& openface_pose_columns();          // 6

}  // namespace persona::ingest
