#pragma once

#include "persona/types.hpp"

#include <string>

namespace persona::spectral {

inline constexpr int kBins = 80;

// Fixed-size channels x 80 spectral representation of one ModalitySeries.
// Rows are per-channel z-normalized log-magnitude spectra resampled onto 80
// equally spaced normalized frequencies in [0, 0.5].
struct SpectralMap {
  Modality modality = Modality::ActionUnits;
  Matrix data;  // channels x kBins
  std::string session_id;
  std::string participant_id;
  Task task = Task::Talk;
  Eigen::Index source_frames = 0;

  Eigen::Index channels() const { return data.rows(); }
};

// Half-spectrum magnitudes of a real signal: value k is
// |sum_t x[t] * exp(-2*pi*i*k*t/n)| for k = 0..floor(n/2).
// Throws too_short for n < 2.
Vector dft_magnitude(const Vector& signal);

// Per channel: mean-center, dft_magnitude, log1p, resample the half-spectrum
// onto kBins points over normalized frequency [0, 0.5] by linear
// interpolation, then z-normalize (constant channels become all-zero rows).
SpectralMap spectral_map(const ModalitySeries& series);

// Persistence: little-endian float32 blob (row-major channels x 80) at
// `path`, JSON sidecar describing it at `path + ".json"`.
void save_map(const SpectralMap& map, const std::string& path);
SpectralMap load_map(const std::string& path);

}  // namespace persona::spectral
