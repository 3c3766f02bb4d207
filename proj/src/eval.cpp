#include "persona/eval.hpp"

#include "persona/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace persona::eval {

using nlohmann::json;

namespace {

json optional_to_json(const std::optional<double>& v) {
  if (v.has_value()) return *v;
  return nullptr;
}

std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string cell(const std::optional<double>& v) {
  if (!v.has_value()) return "-";
  std::ostringstream os;
  os << *v;
  return os.str();
}

}  // namespace

std::string MetricTable::to_json_string() const {
  json j;
  j["labels"] = labels;
  j["mse"] = mse;
  j["mae"] = mae;
  j["pcc"] = json::array();
  j["r2"] = json::array();
  for (const auto& v : pcc) j["pcc"].push_back(optional_to_json(v));
  for (const auto& v : r2) j["r2"].push_back(optional_to_json(v));
  j["mean"] = {{"mse", mean_mse},
               {"mae", mean_mae},
               {"pcc", optional_to_json(mean_pcc)},
               {"r2", optional_to_json(mean_r2)}};
  return j.dump(2);
}

MetricTable MetricTable::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("metric table: invalid JSON: ") + e.what());
  }
  MetricTable t;
  try {
    t.labels = j.at("labels").get<std::vector<std::string>>();
    t.mse = j.at("mse").get<std::vector<double>>();
    if (j.contains("mae") && !j["mae"].is_null()) t.mae = j["mae"].get<std::vector<double>>();
    else t.mae.assign(t.labels.size(), 0.0);
    t.pcc.assign(t.labels.size(), std::nullopt);
    t.r2.assign(t.labels.size(), std::nullopt);
    if (j.contains("pcc") && j["pcc"].is_array())
      for (size_t i = 0; i < t.pcc.size() && i < j["pcc"].size(); ++i) t.pcc[i] = optional_from_json(j["pcc"][i]);
    if (j.contains("r2") && j["r2"].is_array())
      for (size_t i = 0; i < t.r2.size() && i < j["r2"].size(); ++i) t.r2[i] = optional_from_json(j["r2"][i]);
    if (j.contains("mean") && j["mean"].is_object()) {
      t.mean_mse = j["mean"].value("mse", 0.0);
      t.mean_mae = j["mean"].value("mae", 0.0);
      if (j["mean"].contains("pcc")) t.mean_pcc = optional_from_json(j["mean"]["pcc"]);
      if (j["mean"].contains("r2")) t.mean_r2 = optional_from_json(j["mean"]["r2"]);
    } else {
      t.mean_mse = std::accumulate(t.mse.begin(), t.mse.end(), 0.0) / static_cast<double>(t.mse.size());
      t.mean_mae = std::accumulate(t.mae.begin(), t.mae.end(), 0.0) / static_cast<double>(t.mae.size());
    }
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("metric table: bad schema: ") + e.what());
  }
  if (t.mse.size() != t.labels.size() || t.mae.size() != t.labels.size())
    raise(errc::length_mismatch, "metric table: column count mismatch");
  return t;
}

std::string MetricTable::to_csv_string() const {
  std::ostringstream os;
  os << "label,mse,mae,pcc,r2\n";
  for (size_t i = 0; i < labels.size(); ++i)
    os << labels[i] << "," << mse[i] << "," << mae[i] << "," << cell(pcc[i]) << "," << cell(r2[i]) << "\n";
  os << "Mean," << mean_mse << "," << mean_mae << "," << cell(mean_pcc) << "," << cell(mean_r2) << "\n";
  return os.str();
}

MetricTable metrics(const std::vector<bfi2::PersonalityVector>& preds,
                    const std::vector<bfi2::PersonalityVector>& truths,
                    const std::vector<std::string>& labels) {
  if (preds.size() != truths.size())
    raise(errc::length_mismatch, "metrics: prediction/truth list lengths differ");
  if (preds.empty()) raise(errc::length_mismatch, "metrics: empty lists");
  if (preds.size() < 2) raise(errc::too_few_subjects, "metrics: need at least 2 subjects for PCC/R2");

  const Eigen::Index k = preds[0].scores.size();
  if (static_cast<size_t>(k) != labels.size()) raise(errc::length_mismatch, "metrics: label count mismatch");
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].level != preds[0].level || truths[i].level != preds[0].level)
      raise(errc::mixed_levels, "metrics: mixed hierarchy levels");
    if (preds[i].scores.size() != k || truths[i].scores.size() != k)
      raise(errc::length_mismatch, "metrics: inconsistent vector lengths");
  }

  const auto n = static_cast<Eigen::Index>(preds.size());
  MetricTable t;
  t.labels = labels;
  t.mse.resize(labels.size());
  t.mae.resize(labels.size());
  t.pcc.assign(labels.size(), std::nullopt);
  t.r2.assign(labels.size(), std::nullopt);

  for (Eigen::Index j = 0; j < k; ++j) {
    Vector p(n), y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = preds[static_cast<size_t>(i)].scores[j];
      y[i] = truths[static_cast<size_t>(i)].scores[j];
    }
    const Vector diff = p - y;
    t.mse[static_cast<size_t>(j)] = diff.squaredNorm() / static_cast<double>(n);
    t.mae[static_cast<size_t>(j)] = diff.cwiseAbs().mean();

    const double p_mean = p.mean();
    const double y_mean = y.mean();
    const Vector pc = p.array() - p_mean;
    const Vector yc = y.array() - y_mean;
    const double ss_p = pc.squaredNorm();
    const double ss_tot = yc.squaredNorm();
    if (ss_p > 0.0 && ss_tot > 0.0)
      t.pcc[static_cast<size_t>(j)] = pc.dot(yc) / std::sqrt(ss_p * ss_tot);
    if (ss_tot > 0.0) t.r2[static_cast<size_t>(j)] = 1.0 - diff.squaredNorm() / ss_tot;
  }

  t.mean_mse = std::accumulate(t.mse.begin(), t.mse.end(), 0.0) / static_cast<double>(k);
  t.mean_mae = std::accumulate(t.mae.begin(), t.mae.end(), 0.0) / static_cast<double>(k);
  auto mean_present = [](const std::vector<std::optional<double>>& v) -> std::optional<double> {
    double sum = 0.0;
    int cnt = 0;
    for (const auto& x : v)
      if (x.has_value()) {
        sum += *x;
        ++cnt;
      }
    if (cnt == 0) return std::nullopt;
    return sum / cnt;
  };
  t.mean_pcc = mean_present(t.pcc);
  t.mean_r2 = mean_present(t.r2);
  return t;
}

FoldAggregate aggregate_folds(const std::vector<MetricTable>& per_fold) {
  if (per_fold.empty()) raise(errc::empty_list, "aggregate_folds: no tables");
  const size_t k = per_fold[0].labels.size();
  for (const auto& t : per_fold)
    if (t.labels != per_fold[0].labels) raise(errc::length_mismatch, "aggregate_folds: label mismatch");

  FoldAggregate agg;
  agg.n_folds = static_cast<int>(per_fold.size());
  agg.mean.labels = per_fold[0].labels;
  agg.stdev.labels = per_fold[0].labels;
  agg.mean.mse.resize(k);
  agg.mean.mae.resize(k);
  agg.mean.pcc.assign(k, std::nullopt);
  agg.mean.r2.assign(k, std::nullopt);
  agg.stdev = agg.mean;

  auto stats = [&](auto getter) {
    std::vector<std::pair<double, double>> out(k + 1);  // mean, stdev; last slot = mean column
    for (size_t j = 0; j <= k; ++j) {
      std::vector<double> vals;
      for (const auto& t : per_fold) {
        const std::optional<double> v = getter(t, j);
        if (v.has_value()) vals.push_back(*v);
      }
      if (vals.empty()) {
        out[j] = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
        continue;
      }
      const double m = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - m) * (v - m);
      var /= static_cast<double>(vals.size());
      out[j] = {m, std::sqrt(var)};
    }
    return out;
  };

  auto mse_stats = stats([](const MetricTable& t, size_t j) -> std::optional<double> {
    return j < t.mse.size() ? std::optional<double>(t.mse[j]) : std::optional<double>(t.mean_mse);
  });
  auto mae_stats = stats([](const MetricTable& t, size_t j) -> std::optional<double> {
    return j < t.mae.size() ? std::optional<double>(t.mae[j]) : std::optional<double>(t.mean_mae);
  });
  auto pcc_stats = stats([](const MetricTable& t, size_t j) -> std::optional<double> {
    return j < t.pcc.size() ? t.pcc[j] : t.mean_pcc;
  });
  auto r2_stats = stats([](const MetricTable& t, size_t j) -> std::optional<double> {
    return j < t.r2.size() ? t.r2[j] : t.mean_r2;
  });

  for (size_t j = 0; j < k; ++j) {
    agg.mean.mse[j] = mse_stats[j].first;
    agg.stdev.mse[j] = mse_stats[j].second;
    agg.mean.mae[j] = mae_stats[j].first;
    agg.stdev.mae[j] = mae_stats[j].second;
    if (!std::isnan(pcc_stats[j].first)) {
      agg.mean.pcc[j] = pcc_stats[j].first;
      agg.stdev.pcc[j] = pcc_stats[j].second;
    }
    if (!std::isnan(r2_stats[j].first)) {
      agg.mean.r2[j] = r2_stats[j].first;
      agg.stdev.r2[j] = r2_stats[j].second;
    }
  }
  agg.mean.mean_mse = mse_stats[k].first;
  agg.stdev.mean_mse = mse_stats[k].second;
  agg.mean.mean_mae = mae_stats[k].first;
  agg.stdev.mean_mae = mae_stats[k].second;
  if (!std::isnan(pcc_stats[k].first)) {
    agg.mean.mean_pcc = pcc_stats[k].first;
    agg.stdev.mean_pcc = pcc_stats[k].second;
  }
  if (!std::isnan(r2_stats[k].first)) {
    agg.mean.mean_r2 = r2_stats[k].first;
    agg.stdev.mean_r2 = r2_stats[k].second;
  }
  return agg;
}

double partition_objective(const std::vector<std::vector<int>>& groups, const Matrix& trait_scores,
                           const Vector& age_z, const std::vector<int>& gender_codes, int n_genders) {
  const auto n = trait_scores.rows();
  Eigen::RowVectorXd global_traits = trait_scores.colwise().mean();
  Vector global_gender = Vector::Zero(n_genders);
  for (int g : gender_codes) global_gender[g] += 1.0;
  global_gender /= static_cast<double>(n);

  double obj = 0.0;
  for (const auto& group : groups) {
    if (group.empty()) continue;
    Eigen::RowVectorXd tmean = Eigen::RowVectorXd::Zero(trait_scores.cols());
    double amean = 0.0;
    Vector gprop = Vector::Zero(n_genders);
    for (int idx : group) {
      tmean += trait_scores.row(idx);
      amean += age_z[idx];
      gprop[gender_codes[static_cast<size_t>(idx)]] += 1.0;
    }
    const auto sz = static_cast<double>(group.size());
    tmean /= sz;
    amean /= sz;
    gprop /= sz;
    obj += (tmean - global_traits).squaredNorm();
    obj += amean * amean;  // global z-scored age mean is zero
    obj += (gprop - global_gender).squaredNorm();
  }
  return obj;
}

namespace {

struct Roster {
  std::vector<std::string> ids;
  Matrix traits;  // n x n_traits
  Vector age_z;
  std::vector<int> gender_codes;
  int n_genders = 0;
};

Roster build_roster(const DatasetManifest& manifest,
                    const std::map<std::string, bfi2::PersonalityVector>& nuance_labels,
                    const bfi2::ScoringKey& key) {
  Roster r;
  for (const auto& p : manifest.participants) r.ids.push_back(p.id);
  const auto n = static_cast<Eigen::Index>(r.ids.size());
  r.traits.resize(n, key.n_traits());
  Vector age(n);
  std::map<std::string, int> gender_of;
  r.gender_codes.resize(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& info = manifest.participants[static_cast<size_t>(i)];
    auto it = nuance_labels.find(info.id);
    if (it == nuance_labels.end()) raise(errc::missing_label_row, "no labels for participant " + info.id);
    r.traits.row(i) = bfi2::nuances_to_traits(it->second, key).scores.transpose();
    age[i] = info.age;
    auto [git, inserted] = gender_of.emplace(info.gender, static_cast<int>(gender_of.size()));
    r.gender_codes[static_cast<size_t>(i)] = git->second;
    (void)inserted;
  }
  r.n_genders = static_cast<int>(gender_of.size());
  const double age_mean = age.mean();
  const double age_sd = std::sqrt((age.array() - age_mean).square().mean());
  r.age_z = age_sd > 1e-12 ? ((age.array() - age_mean) / age_sd).matrix().eval() : Vector::Zero(n).eval();
  return r;
}

}  // namespace

std::vector<FoldSplit> make_folds(const DatasetManifest& manifest,
                                  const std::map<std::string, bfi2::PersonalityVector>& nuance_labels,
                                  const bfi2::ScoringKey& key, int n_folds, std::uint64_t seed) {
  if (n_folds < 3) raise(errc::invalid_bounds, "make_folds: need at least 3 folds (train/val/test)");
  const Roster roster = build_roster(manifest, nuance_labels, key);
  const int n = static_cast<int>(roster.ids.size());
  if (n < n_folds)
    raise(errc::too_few_participants,
          "make_folds: " + std::to_string(n) + " participants for " + std::to_string(n_folds) + " folds");

  // Group size caps: as equal as possible.
  std::vector<int> capacity(static_cast<size_t>(n_folds), n / n_folds);
  for (int i = 0; i < n % n_folds; ++i) ++capacity[static_cast<size_t>(i)];

  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "fold-partition"));
  std::shuffle(order.begin(), order.end(), rng);

  // Greedy: place each participant in the group whose objective grows least.
  std::vector<std::vector<int>> groups(static_cast<size_t>(n_folds));
  for (int idx : order) {
    int best_g = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    for (int g = 0; g < n_folds; ++g) {
      if (static_cast<int>(groups[static_cast<size_t>(g)].size()) >= capacity[static_cast<size_t>(g)]) continue;
      groups[static_cast<size_t>(g)].push_back(idx);
      const double obj =
          partition_objective(groups, roster.traits, roster.age_z, roster.gender_codes, roster.n_genders);
      groups[static_cast<size_t>(g)].pop_back();
      if (obj < best_obj) {
        best_obj = obj;
        best_g = g;
      }
    }
    groups[static_cast<size_t>(best_g)].push_back(idx);
  }

  // Local refinement: accept any cross-group swap that lowers the objective.
  double current =
      partition_objective(groups, roster.traits, roster.age_z, roster.gender_codes, roster.n_genders);
  for (int round = 0; round < 8; ++round) {
    bool improved = false;
    for (size_t ga = 0; ga < groups.size(); ++ga) {
      for (size_t gb = ga + 1; gb < groups.size(); ++gb) {
        for (size_t ia = 0; ia < groups[ga].size(); ++ia) {
          for (size_t ib = 0; ib < groups[gb].size(); ++ib) {
            std::swap(groups[ga][ia], groups[gb][ib]);
            const double obj =
                partition_objective(groups, roster.traits, roster.age_z, roster.gender_codes, roster.n_genders);
            if (obj + 1e-12 < current) {
              current = obj;
              improved = true;
            } else {
              std::swap(groups[ga][ia], groups[gb][ib]);
            }
          }
        }
      }
    }
    if (!improved) break;
  }

  std::vector<FoldSplit> folds;
  for (int f = 0; f < n_folds; ++f) {
    FoldSplit split;
    split.fold = f;
    const auto& test_group = groups[static_cast<size_t>(f)];
    const auto& val_group = groups[static_cast<size_t>((f + 1) % n_folds)];
    for (int idx : test_group) split.test_participants.insert(roster.ids[static_cast<size_t>(idx)]);
    for (int idx : val_group) split.val_participants.insert(roster.ids[static_cast<size_t>(idx)]);
    for (int g = 0; g < n_folds; ++g) {
      if (g == f || g == (f + 1) % n_folds) continue;
      for (int idx : groups[static_cast<size_t>(g)])
        split.train_participants.insert(roster.ids[static_cast<size_t>(idx)]);
    }

    for (const auto& session : manifest.sessions) {
      auto side_of = [&](const std::string& pid) -> int {
        if (split.train_participants.count(pid)) return 0;
        if (split.val_participants.count(pid)) return 1;
        if (split.test_participants.count(pid)) return 2;
        return -1;
      };
      const int a = side_of(session.target_id);
      const int b = side_of(session.partner_id);
      if (a != b || a < 0) {
        split.dropped_sessions.push_back(session.session_id);
      } else if (a == 0) {
        split.train_sessions.push_back(session.session_id);
      } else if (a == 1) {
        split.val_sessions.push_back(session.session_id);
      } else {
        split.test_sessions.push_back(session.session_id);
      }
    }
    folds.push_back(std::move(split));
  }
  return folds;
}

bfi2::PersonalityVector baseline_predict(const std::vector<bfi2::PersonalityVector>& train_truths) {
  if (train_truths.empty()) raise(errc::empty_split, "baseline_predict: empty training truths");
  const auto level = train_truths[0].level;
  const Eigen::Index k = train_truths[0].scores.size();
  bfi2::PersonalityVector out;
  out.level = level;
  out.subject = "baseline";
  out.scores = Vector::Zero(k);
  for (const auto& t : train_truths) {
    if (t.level != level || t.scores.size() != k)
      raise(errc::mixed_levels, "baseline_predict: mixed levels in training truths");
    out.scores += t.scores;
  }
  out.scores /= static_cast<double>(train_truths.size());
  return out;
}

MetricTable evaluate_cross_level(
    const std::map<std::string, std::vector<bfi2::PersonalityVector>>& preds_by_participant,
    const std::map<std::string, bfi2::PersonalityVector>& nuance_truths, const std::set<std::string>& required,
    const bfi2::ScoringKey& key, bfi2::AggregationOrder order, bfi2::CollapseStrategy strategy) {
  std::vector<bfi2::PersonalityVector> preds, truths;
  for (const auto& pid : required) {
    auto pit = preds_by_participant.find(pid);
    if (pit == preds_by_participant.end() || pit->second.empty())
      raise(errc::missing_participant, "no predictions for test participant " + pid);
    auto tit = nuance_truths.find(pid);
    if (tit == nuance_truths.end()) raise(errc::missing_participant, "no ground truth for participant " + pid);
    preds.push_back(bfi2::to_trait_level(pit->second, key, order, strategy));
    truths.push_back(bfi2::nuances_to_traits(tit->second, key));
  }
  return metrics(preds, truths, key.labels_at(bfi2::Level::Trait));
}

ImprovementReport improvement_report(const MetricTable& a, const MetricTable& b) {
  if (a.labels != b.labels) raise(errc::length_mismatch, "improvement_report: label mismatch");
  ImprovementReport rep;
  rep.labels = a.labels;
  rep.percent.resize(a.labels.size());
  rep.max_percent = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < a.labels.size(); ++i) {
    if (!(a.mse[i] > 0.0)) raise(errc::non_positive_reference, "reference MSE cell must be positive: " + a.labels[i]);
    rep.percent[i] = 100.0 * (1.0 - b.mse[i] / a.mse[i]);
    rep.max_percent = std::max(rep.max_percent, rep.percent[i]);
  }
  if (!(a.mean_mse > 0.0)) raise(errc::non_positive_reference, "reference mean MSE must be positive");
  rep.mean_percent = 100.0 * (1.0 - b.mean_mse / a.mean_mse);
  rep.max_percent = std::max(rep.max_percent, rep.mean_percent);
  return rep;
}

std::string ImprovementReport::to_markdown(const std::string& reference_name,
                                           const std::string& comparison_name) const {
  std::ostringstream os;
  os << "# MSE decrease: " << comparison_name << " vs " << reference_name << "\n\n";
  os << "|";
  for (const auto& l : labels) os << " " << l << " |";
  os << " Mean |\n|";
  for (size_t i = 0; i <= labels.size(); ++i) os << "---|";
  os << "\n|";
  os.setf(std::ios::fixed);
  os.precision(2);
  for (double p : percent) os << " " << p << "% |";
  os << " " << mean_percent << "% |\n\n";
  os << "Max decrease: " << max_percent << "%\n";
  return os.str();
}

namespace {

json fold_to_json(const FoldSplit& f) {
  return {{"fold", f.fold},
          {"train_participants", std::vector<std::string>(f.train_participants.begin(), f.train_participants.end())},
          {"val_participants", std::vector<std::string>(f.val_participants.begin(), f.val_participants.end())},
          {"test_participants", std::vector<std::string>(f.test_participants.begin(), f.test_participants.end())},
          {"train_sessions", f.train_sessions},
          {"val_sessions", f.val_sessions},
          {"test_sessions", f.test_sessions},
          {"dropped_sessions", f.dropped_sessions}};
}

FoldSplit fold_from_json(const json& j) {
  FoldSplit f;
  f.fold = j.at("fold").get<int>();
  for (const auto& s : j.at("train_participants")) f.train_participants.insert(s.get<std::string>());
  for (const auto& s : j.at("val_participants")) f.val_participants.insert(s.get<std::string>());
  for (const auto& s : j.at("test_participants")) f.test_participants.insert(s.get<std::string>());
  f.train_sessions = j.at("train_sessions").get<std::vector<std::string>>();
  f.val_sessions = j.at("val_sessions").get<std::vector<std::string>>();
  f.test_sessions = j.at("test_sessions").get<std::vector<std::string>>();
  f.dropped_sessions = j.at("dropped_sessions").get<std::vector<std::string>>();
  return f;
}

}  // namespace

void save_splits(const std::string& path, const SplitFile& splits) {
  json j;
  j["manifest"] = splits.manifest_path;
  j["n_folds"] = splits.n_folds;
  j["seed"] = splits.seed;
  j["folds"] = json::array();
  for (const auto& f : splits.folds) j["folds"].push_back(fold_to_json(f));
  std::ofstream out(path);
  if (!out) raise(errc::io_error, "cannot write splits: " + path);
  out << j.dump(2) << "\n";
}

SplitFile load_splits(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(errc::io_error, "cannot open splits: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("bad splits JSON: ") + e.what());
  }
  SplitFile s;
  try {
    s.manifest_path = j.at("manifest").get<std::string>();
    s.n_folds = j.at("n_folds").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& fj : j.at("folds")) s.folds.push_back(fold_from_json(fj));
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("bad splits schema: ") + e.what());
  }
  return s;
}

}  // namespace persona::eval
