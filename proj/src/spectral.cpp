#include "persona/spectral.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <vector>

namespace persona::spectral {

using nlohmann::json;

Vector dft_magnitude(const Vector& signal) {
  const Eigen::Index n = signal.size();
  if (n < 2) raise(errc::too_short, "dft_magnitude: need at least 2 samples, got " + std::to_string(n));
  if (!signal.allFinite()) raise(errc::non_finite, "dft_magnitude: non-finite input");

  const Eigen::Index half = n / 2;
  Vector mags(half + 1);

  // Direct summation with a trig recurrence per bin. O(n^2) overall, which is
  // fine at the sequence lengths this pipeline sees; magnitudes stay exact for
  // arbitrary n (no padding).
  const double base = -2.0 * std::numbers::pi / static_cast<double>(n);
  for (Eigen::Index k = 0; k <= half; ++k) {
    const double angle = base * static_cast<double>(k);
    const double cos_step = std::cos(angle);
    const double sin_step = std::sin(angle);
    double c = 1.0, s = 0.0;  // cos/sin of angle*t, starting at t=0
    double re = 0.0, im = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) {
      const double x = signal[t];
      re += x * c;
      im += x * s;
      const double c_next = c * cos_step - s * sin_step;
      s = c * sin_step + s * cos_step;
      c = c_next;
    }
    mags[k] = std::hypot(re, im);
  }
  return mags;
}

namespace {

// Resamples half-spectrum values (sample k sits at normalized frequency k/n)
// onto `bins` equally spaced points over [0, 0.5], clamping beyond the last
// sample (odd n tops out below 0.5).
Vector resample_half_spectrum(const Vector& mags, Eigen::Index n, int bins) {
  Vector out(bins);
  const Eigen::Index last = mags.size() - 1;
  for (int b = 0; b < bins; ++b) {
    const double f = 0.5 * static_cast<double>(b) / static_cast<double>(bins - 1);
    const double pos = f * static_cast<double>(n);  // fractional sample index
    if (pos >= static_cast<double>(last)) {
      out[b] = mags[last];
      continue;
    }
    const auto lo = static_cast<Eigen::Index>(std::floor(pos));
    const double w = pos - static_cast<double>(lo);
    out[b] = (1.0 - w) * mags[lo] + w * mags[lo + 1];
  }
  return out;
}

}  // namespace

SpectralMap spectral_map(const ModalitySeries& series) {
  const Eigen::Index n = series.frames();
  if (n < 2) raise(errc::too_short, "spectral_map: need at least 2 frames, got " + std::to_string(n));
  if (!series.data.allFinite()) raise(errc::non_finite, "spectral_map: non-finite series");

  SpectralMap map;
  map.modality = series.modality;
  map.session_id = series.session_id;
  map.participant_id = series.participant_id;
  map.task = series.task;
  map.source_frames = n;
  map.data.resize(series.channels(), kBins);

  for (Eigen::Index c = 0; c < series.channels(); ++c) {
    Vector x = series.data.col(c);
    x.array() -= x.mean();
    Vector mags = dft_magnitude(x);
    mags = mags.array().log1p();
    Vector row = resample_half_spectrum(mags, n, kBins);

    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    if (sd < 1e-12) {
      map.data.row(c).setZero();
    } else {
      map.data.row(c) = ((row.array() - mean) / sd).transpose();
    }
  }
  return map;
}

void save_map(const SpectralMap& map, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) raise(errc::io_error, "cannot write spectral map: " + path);
  std::vector<float> payload;
  payload.reserve(static_cast<size_t>(map.data.size()));
  for (Eigen::Index r = 0; r < map.data.rows(); ++r)
    for (Eigen::Index c = 0; c < map.data.cols(); ++c) payload.push_back(static_cast<float>(map.data(r, c)));
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!f) raise(errc::io_error, "short write: " + path);

  json side = {
      {"modality", persona::to_string(map.modality)},
      {"channels", map.data.rows()},
      {"bins", kBins},
      {"session_id", map.session_id},
      {"participant_id", map.participant_id},
      {"task", persona::to_string(map.task)},
      {"source_frames", map.source_frames},
  };
  std::ofstream sf(path + ".json");
  if (!sf) raise(errc::io_error, "cannot write sidecar: " + path + ".json");
  sf << side.dump(2) << "\n";
}

SpectralMap load_map(const std::string& path) {
  std::ifstream sf(path + ".json");
  if (!sf) raise(errc::io_error, "cannot open sidecar: " + path + ".json");
  json side;
  try {
    sf >> side;
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("bad sidecar JSON: ") + e.what());
  }

  SpectralMap map;
  try {
    map.modality = modality_from_string(side.at("modality").get<std::string>());
    map.session_id = side.at("session_id").get<std::string>();
    map.participant_id = side.at("participant_id").get<std::string>();
    map.task = task_from_string(side.at("task").get<std::string>());
    map.source_frames = side.at("source_frames").get<Eigen::Index>();
    if (side.at("bins").get<int>() != kBins) raise(errc::io_error, "sidecar bins != 80: " + path);
    const auto channels = side.at("channels").get<Eigen::Index>();
    map.data.resize(channels, kBins);
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("bad sidecar schema: ") + e.what());
  }

  std::ifstream f(path, std::ios::binary);
  if (!f) raise(errc::io_error, "cannot open spectral map: " + path);
  std::vector<float> payload(static_cast<size_t>(map.data.size()));
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)))
    raise(errc::io_error, "truncated spectral map: " + path);
  size_t idx = 0;
  for (Eigen::Index r = 0; r < map.data.rows(); ++r)
    for (Eigen::Index c = 0; c < map.data.cols(); ++c) map.data(r, c) = static_cast<double>(payload[idx++]);
  return map;
}

}  // namespace persona::spectral
