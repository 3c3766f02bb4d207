#include "persona/ingest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace persona::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& openface_au_intensity_columns() {
  static const std::vector<std::string> cols = {
      "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r", "AU10_r", "AU12_r",
      "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r", "AU25_r", "AU26_r", "AU45_r"};
  return cols;
}

const std::vector<std::string>& openface_au_presence_columns() {
  static const std::vector<std::string> cols = {
      "AU01_c", "AU02_c", "AU04_c", "AU05_c", "AU06_c", "AU07_c", "AU09_c", "AU10_c", "AU12_c",
      "AU14_c", "AU15_c", "AU17_c", "AU20_c", "AU23_c", "AU25_c", "AU26_c", "AU28_c", "AU45_c"};
  return cols;
}

const std::vector<std::string>& openface_gaze_columns() {
  static const std::vector<std::string> cols = {"gaze_0_x", "gaze_0_y", "gaze_0_z",
                                                "gaze_1_x", "gaze_1_y", "gaze_1_z"};
  return cols;
}

const std::vector<std::string>& openface_pose_columns() {
  static const std::vector<std::string> cols = {"pose_Tx", "pose_Ty", "pose_Tz",
                                                "pose_Rx", "pose_Ry", "pose_Rz"};
  return cols;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // OpenFace pads cells with a leading space.
    size_t a = cell.find_first_not_of(" \t");
    size_t b = cell.find_last_not_of(" \t\r");
    cells.push_back(a == std::string::npos ? std::string() : cell.substr(a, b - a + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, const std::string& path, size_t lineno) {
  try {
    size_t pos = 0;
    const double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    raise(errc::io_error, path + ":" + std::to_string(lineno) + ": bad numeric cell '" + cell + "'");
  }
}

// Gap-fills invalid cells of one channel by linear interpolation between the
// nearest valid neighbors; edges hold the nearest valid value.
void interpolate_channel(Eigen::Ref<Eigen::VectorXd> col, const std::vector<bool>& valid,
                         const std::string& what) {
  const Eigen::Index n = col.size();
  Eigen::Index first_valid = -1, last_valid = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (valid[static_cast<size_t>(i)]) {
      if (first_valid < 0) first_valid = i;
      last_valid = i;
    }
  }
  if (first_valid < 0) raise(errc::all_frames_failed, "no successful frame to interpolate from (" + what + ")");

  for (Eigen::Index i = 0; i < first_valid; ++i) col[i] = col[first_valid];
  for (Eigen::Index i = last_valid + 1; i < n; ++i) col[i] = col[last_valid];

  Eigen::Index i = first_valid;
  while (i < last_valid) {
    if (valid[static_cast<size_t>(i + 1)]) {
      ++i;
      continue;
    }
    Eigen::Index j = i + 1;
    while (!valid[static_cast<size_t>(j)]) ++j;
    const double lo = col[i], hi = col[j];
    for (Eigen::Index k = i + 1; k < j; ++k) {
      const double w = static_cast<double>(k - i) / static_cast<double>(j - i);
      col[k] = (1.0 - w) * lo + w * hi;
    }
    i = j;
  }
}

struct WavData {
  std::vector<double> samples;
  uint32_t sample_rate = 0;
};

uint32_t read_u32(std::istream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& f) {
  unsigned char b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(static_cast<uint16_t>(b[0]) | (static_cast<uint16_t>(b[1]) << 8));
}

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) raise(errc::io_error, "cannot open audio file: " + path);

  char tag[4];
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "RIFF", 4) != 0) raise(errc::unsupported_format, "not a RIFF file: " + path);
  read_u32(f);  // riff size
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "WAVE", 4) != 0) raise(errc::unsupported_format, "not a WAVE file: " + path);

  uint16_t audio_format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<char> data_bytes;
  bool have_data = false;

  while (f) {
    f.read(tag, 4);
    if (!f) break;
    const uint32_t chunk_size = read_u32(f);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      audio_format = read_u16(f);
      channels = read_u16(f);
      sample_rate = read_u32(f);
      read_u32(f);  // byte rate
      read_u16(f);  // block align
      bits = read_u16(f);
      if (chunk_size > 16) f.ignore(chunk_size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data_bytes.resize(chunk_size);
      f.read(data_bytes.data(), chunk_size);
      if (f.gcount() != static_cast<std::streamsize>(chunk_size))
        raise(errc::unsupported_format, "truncated WAV data chunk: " + path);
      have_data = true;
    } else {
      f.ignore(chunk_size + (chunk_size % 2));
    }
  }
  if (!have_fmt || !have_data) raise(errc::unsupported_format, "WAV missing fmt/data chunk: " + path);
  if (channels != 1) raise(errc::unsupported_format, "audio must be mono, got " + std::to_string(channels) + " channels");

  WavData wav;
  wav.sample_rate = sample_rate;
  if (audio_format == 1 && bits == 16) {
    const size_t n = data_bytes.size() / 2;
    wav.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t v;
      std::memcpy(&v, data_bytes.data() + 2 * i, 2);
      wav.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (audio_format == 3 && bits == 32) {
    const size_t n = data_bytes.size() / 4;
    wav.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, data_bytes.data() + 4 * i, 4);
      wav.samples[i] = static_cast<double>(v);
    }
  } else {
    raise(errc::unsupported_format,
          "unsupported WAV encoding (format=" + std::to_string(audio_format) + ", bits=" + std::to_string(bits) + ")");
  }
  return wav;
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

OpenFaceResult parse_openface_csv(const std::string& path, const std::string& participant_id,
                                  const std::string& session_id, Task task, double frame_rate) {
  std::ifstream f(path);
  if (!f) raise(errc::io_error, "cannot open OpenFace CSV: " + path);

  std::string header;
  if (!std::getline(f, header)) raise(errc::empty_file, "empty OpenFace CSV: " + path);
  const std::vector<std::string> header_cells = split_csv_line(header);

  std::map<std::string, int> col_of;
  for (size_t i = 0; i < header_cells.size(); ++i) col_of.emplace(header_cells[i], static_cast<int>(i));

  auto need = [&](const std::string& name) -> int {
    auto it = col_of.find(name);
    if (it == col_of.end()) raise(errc::missing_column, "OpenFace CSV missing column '" + name + "': " + path);
    return it->second;
  };

  const int success_col = need("success");
  std::vector<int> au_cols, gaze_cols, pose_cols;
  for (const auto& c : openface_au_intensity_columns()) au_cols.push_back(need(c));
  for (const auto& c : openface_au_presence_columns()) au_cols.push_back(need(c));
  for (const auto& c : openface_gaze_columns()) gaze_cols.push_back(need(c));
  for (const auto& c : openface_pose_columns()) pose_cols.push_back(need(c));

  std::vector<std::vector<double>> rows;
  std::vector<bool> success;
  std::string line;
  size_t lineno = 1;
  const size_t n_needed = au_cols.size() + gaze_cols.size() + pose_cols.size();
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header_cells.size())
      raise(errc::io_error, path + ":" + std::to_string(lineno) + ": expected " +
                                std::to_string(header_cells.size()) + " cells, got " + std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(n_needed);
    auto grab = [&](int c) { row.push_back(parse_cell(cells[static_cast<size_t>(c)], path, lineno)); };
    for (int c : au_cols) grab(c);
    for (int c : gaze_cols) grab(c);
    for (int c : pose_cols) grab(c);
    rows.push_back(std::move(row));
    success.push_back(parse_cell(cells[static_cast<size_t>(success_col)], path, lineno) >= 0.5);
  }
  if (rows.empty()) raise(errc::empty_file, "OpenFace CSV has no data rows: " + path);

  const auto n_frames = static_cast<Eigen::Index>(rows.size());
  OpenFaceResult out;
  out.failed_frames = static_cast<int>(std::count(success.begin(), success.end(), false));

  auto make_series = [&](Modality m, size_t offset, int n_channels) {
    ModalitySeries s;
    s.modality = m;
    s.frame_rate = frame_rate;
    s.participant_id = participant_id;
    s.session_id = session_id;
    s.task = task;
    s.data.resize(n_frames, n_channels);
    for (Eigen::Index r = 0; r < n_frames; ++r)
      for (int c = 0; c < n_channels; ++c) s.data(r, c) = rows[static_cast<size_t>(r)][offset + static_cast<size_t>(c)];
    return s;
  };

  out.action_units = make_series(Modality::ActionUnits, 0, 35);
  out.gaze = make_series(Modality::Gaze, 35, 6);
  out.head_pose = make_series(Modality::HeadPose, 41, 6);

  // Clamp legal ranges on successful frames before interpolating, so the
  // interpolated values inherit the bounds.
  for (Eigen::Index r = 0; r < n_frames; ++r) {
    if (!success[static_cast<size_t>(r)]) continue;
    for (int c = 0; c < 17; ++c) {
      double& v = out.action_units.data(r, c);
      const double clamped = std::clamp(v, 0.0, 5.0);
      if (clamped != v) {
        v = clamped;
        ++out.clamped_cells;
      }
    }
    for (int c = 17; c < 35; ++c) {
      double& v = out.action_units.data(r, c);
      const double rounded = std::clamp(std::round(v), 0.0, 1.0);
      if (std::abs(rounded - v) > 1e-9) ++out.clamped_cells;
      v = rounded;
    }
  }

  for (ModalitySeries* s : {&out.action_units, &out.gaze, &out.head_pose}) {
    for (Eigen::Index c = 0; c < s->channels(); ++c) {
      std::vector<bool> valid(static_cast<size_t>(n_frames));
      bool all_valid = true;
      for (Eigen::Index r = 0; r < n_frames; ++r) {
        valid[static_cast<size_t>(r)] = success[static_cast<size_t>(r)] && std::isfinite(s->data(r, c));
        all_valid = all_valid && valid[static_cast<size_t>(r)];
      }
      if (all_valid) continue;
      interpolate_channel(s->data.col(c), valid, path);
    }
  }

  // Interpolated presence values snap back to {0,1}.
  for (Eigen::Index r = 0; r < n_frames; ++r)
    for (int c = 17; c < 35; ++c)
      out.action_units.data(r, c) = std::clamp(std::round(out.action_units.data(r, c)), 0.0, 1.0);

  return out;
}

ModalitySeries ingest_audio(const std::string& path, double frame_rate, const std::string& participant_id,
                            const std::string& session_id, Task task) {
  if (!(frame_rate > 0.0)) raise(errc::bad_manifest, "frame_rate must be positive");

  ModalitySeries s;
  s.modality = Modality::Audio;
  s.frame_rate = frame_rate;
  s.participant_id = participant_id;
  s.session_id = session_id;
  s.task = task;

  if (has_suffix(path, ".csv")) {
    // Precomputed per-frame feature series, one value per line.
    std::ifstream f(path);
    if (!f) raise(errc::io_error, "cannot open audio CSV: " + path);
    std::vector<double> values;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      values.push_back(parse_cell(line, path, lineno));
      if (!std::isfinite(values.back())) raise(errc::non_finite, path + ": non-finite audio value");
    }
    if (values.size() < 2) raise(errc::empty_audio, "audio CSV has fewer than 2 frames: " + path);
    s.data.resize(static_cast<Eigen::Index>(values.size()), 1);
    for (size_t i = 0; i < values.size(); ++i) s.data(static_cast<Eigen::Index>(i), 0) = values[i];
    return s;
  }
  if (!has_suffix(path, ".wav")) raise(errc::unsupported_format, "audio must be .wav or .csv: " + path);

  const WavData wav = read_wav(path);
  if (wav.samples.empty()) raise(errc::empty_audio, "WAV has no samples: " + path);
  if (wav.sample_rate == 0) raise(errc::unsupported_format, "WAV sample rate is zero: " + path);

  const double samples_per_frame = static_cast<double>(wav.sample_rate) / frame_rate;
  const auto n_frames =
      static_cast<Eigen::Index>(std::floor(static_cast<double>(wav.samples.size()) / samples_per_frame));
  if (n_frames < 2) raise(errc::empty_audio, "audio shorter than 2 video frames: " + path);

  s.data.resize(n_frames, 1);
  for (Eigen::Index i = 0; i < n_frames; ++i) {
    const auto lo = static_cast<size_t>(std::floor(static_cast<double>(i) * samples_per_frame));
    const auto hi = static_cast<size_t>(std::floor(static_cast<double>(i + 1) * samples_per_frame));
    double energy = 0.0;
    for (size_t t = lo; t < hi && t < wav.samples.size(); ++t) energy += wav.samples[t] * wav.samples[t];
    s.data(i, 0) = std::log1p(energy);
  }
  return s;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise(errc::io_error, "cannot open manifest: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    raise(errc::bad_manifest, std::string("manifest is not valid JSON: ") + e.what());
  }

  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  auto resolve = [&](const std::string& rel) { return (fs::path(m.base_dir) / rel).string(); };

  try {
    if (j.value("version", 0) != 1) raise(errc::bad_manifest, "manifest version must be 1");
    m.frame_rate = j.at("frame_rate").get<double>();
    if (!(m.frame_rate > 0.0)) raise(errc::bad_manifest, "frame_rate must be positive");

    std::set<std::string> participant_ids;
    for (const auto& p : j.at("participants")) {
      ParticipantInfo info;
      info.id = p.at("id").get<std::string>();
      info.age = p.at("age").get<double>();
      info.gender = p.at("gender").get<std::string>();
      if (!participant_ids.insert(info.id).second)
        raise(errc::bad_manifest, "duplicate participant id: " + info.id);
      m.participants.push_back(std::move(info));
    }

    std::set<std::string> session_ids;
    for (const auto& sj : j.at("sessions")) {
      SessionEntry e;
      e.session_id = sj.at("session_id").get<std::string>();
      if (!session_ids.insert(e.session_id).second)
        raise(errc::duplicate_session, "duplicate session id: " + e.session_id);
      e.task = task_from_string(sj.at("task").get<std::string>());
      e.target_id = sj.at("target_id").get<std::string>();
      e.partner_id = sj.at("partner_id").get<std::string>();
      if (e.target_id == e.partner_id)
        raise(errc::bad_manifest, "session " + e.session_id + ": target_id equals partner_id");
      for (const std::string* id : {&e.target_id, &e.partner_id})
        if (!participant_ids.count(*id))
          raise(errc::bad_manifest, "session " + e.session_id + " references unlisted participant " + *id);
      const auto& files = sj.at("files");
      e.target_openface = resolve(files.at("target").at("openface").get<std::string>());
      e.target_audio = resolve(files.at("target").at("audio").get<std::string>());
      e.partner_openface = resolve(files.at("partner").at("openface").get<std::string>());
      e.partner_audio = resolve(files.at("partner").at("audio").get<std::string>());
      m.sessions.push_back(std::move(e));
    }

    m.labels_path = resolve(j.value("labels", "labels.csv"));
  } catch (const json::exception& e) {
    raise(errc::bad_manifest, std::string("bad manifest schema: ") + e.what());
  }

  for (const auto& e : m.sessions) {
    for (const std::string* p : {&e.target_openface, &e.target_audio, &e.partner_openface, &e.partner_audio})
      if (!fs::exists(*p)) raise(errc::dangling_reference, "manifest references missing file: " + *p);
  }
  if (!fs::exists(m.labels_path)) raise(errc::dangling_reference, "manifest references missing labels file: " + m.labels_path);

  // Every participant needs a label row; only the id column matters here.
  {
    std::ifstream lf(m.labels_path);
    std::string line;
    std::set<std::string> labeled;
    bool first = true;
    while (std::getline(lf, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto comma = line.find(',');
      const std::string id = comma == std::string::npos ? line : line.substr(0, comma);
      if (first) {
        first = false;
        if (id != "participant_id") raise(errc::missing_column, "labels CSV must start with participant_id");
        continue;
      }
      labeled.insert(id);
    }
    for (const auto& p : m.participants)
      if (!labeled.count(p.id)) raise(errc::missing_label_row, "participant without label row: " + p.id);
  }

  return m;
}

SessionRecord load_session(const DatasetManifest& manifest, const SessionEntry& entry) {
  SessionRecord rec;
  rec.session_id = entry.session_id;
  rec.task = entry.task;

  auto load_bundle = [&](const std::string& pid, const std::string& openface, const std::string& audio) {
    ParticipantBundle b;
    b.participant_id = pid;
    OpenFaceResult visual = parse_openface_csv(openface, pid, entry.session_id, entry.task, manifest.frame_rate);
    b.series.push_back(std::move(visual.action_units));
    b.series.push_back(std::move(visual.gaze));
    b.series.push_back(std::move(visual.head_pose));
    b.series.push_back(ingest_audio(audio, manifest.frame_rate, pid, entry.session_id, entry.task));
    return b;
  };

  rec.target = load_bundle(entry.target_id, entry.target_openface, entry.target_audio);
  rec.partner = load_bundle(entry.partner_id, entry.partner_openface, entry.partner_audio);
  rec.validate();
  return rec;
}

}  // namespace persona::ingest
