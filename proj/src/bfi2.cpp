#include "persona/bfi2.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace persona::bfi2 {

using nlohmann::json;

std::string to_string(Level l) {
  switch (l) {
    case Level::Nuance: return "nuance";
    case Level::Facet: return "facet";
    case Level::Trait: return "trait";
  }
  return "?";
}

Level level_from_string(const std::string& s) {
  if (s == "nuance" || s == "nuances") return Level::Nuance;
  if (s == "facet" || s == "facets") return Level::Facet;
  if (s == "trait" || s == "traits") return Level::Trait;
  raise(errc::level_mismatch, "unknown hierarchy level: " + s);
}

CollapseStrategy strategy_from_string(const std::string& s) {
  if (s == "mean") return CollapseStrategy::Mean;
  if (s == "median") return CollapseStrategy::Median;
  raise(errc::invalid_bounds, "unknown collapse strategy: " + s);
}

AggregationOrder order_from_string(const std::string& s) {
  if (s == "convert-first") return AggregationOrder::ConvertThenCollapse;
  if (s == "collapse-first") return AggregationOrder::CollapseThenConvert;
  raise(errc::invalid_bounds, "unknown aggregation order: " + s);
}

int ScoringKey::size_at(Level l) const {
  switch (l) {
    case Level::Nuance: return n_items();
    case Level::Facet: return n_facets();
    case Level::Trait: return n_traits();
  }
  return 0;
}

std::vector<std::string> ScoringKey::labels_at(Level l) const {
  std::vector<std::string> out;
  switch (l) {
    case Level::Nuance:
      for (const auto& it : items) out.push_back(it.id);
      break;
    case Level::Facet:
      for (const auto& f : facets) out.push_back(f.id);
      break;
    case Level::Trait:
      out = trait_ids;
      break;
  }
  return out;
}

void ScoringKey::finalize() {
  if (!(likert_min < likert_max)) raise(errc::bad_cardinality, "likert bounds must satisfy min < max");
  if (trait_ids.empty() || facets.empty() || items.empty())
    raise(errc::bad_cardinality, "key needs at least one trait, facet and item");

  std::map<std::string, int> trait_index, facet_index;
  for (int i = 0; i < n_traits(); ++i) {
    if (!trait_index.emplace(trait_ids[i], i).second)
      raise(errc::duplicate_item, "duplicate trait id: " + trait_ids[i]);
  }
  for (int i = 0; i < n_facets(); ++i) {
    if (!facet_index.emplace(facets[i].id, i).second)
      raise(errc::duplicate_item, "duplicate facet id: " + facets[i].id);
  }

  item_to_facet.assign(items.size(), -1);
  facet_to_trait.assign(facets.size(), -1);
  facet_items.assign(facets.size(), {});
  trait_facets.assign(trait_ids.size(), {});
  trait_items.assign(trait_ids.size(), {});

  std::set<std::string> item_ids;
  for (int i = 0; i < n_items(); ++i) {
    if (!item_ids.insert(items[i].id).second)
      raise(errc::duplicate_item, "duplicate item id: " + items[i].id);
    auto it = facet_index.find(items[i].facet_id);
    if (it == facet_index.end())
      raise(errc::bad_cardinality, "item " + items[i].id + " references unknown facet " + items[i].facet_id);
    item_to_facet[i] = it->second;
    facet_items[it->second].push_back(i);
  }
  for (int f = 0; f < n_facets(); ++f) {
    auto it = trait_index.find(facets[f].trait_id);
    if (it == trait_index.end())
      raise(errc::bad_cardinality, "facet " + facets[f].id + " references unknown trait " + facets[f].trait_id);
    facet_to_trait[f] = it->second;
    trait_facets[it->second].push_back(f);
    for (int i : facet_items[f]) trait_items[it->second].push_back(i);
  }

  // Uniform cardinality: every facet carries the same number of items and
  // every trait the same number of facets.
  const size_t items_per_facet = facet_items[0].size();
  for (int f = 0; f < n_facets(); ++f) {
    if (facet_items[f].size() != items_per_facet || items_per_facet == 0)
      raise(errc::bad_cardinality,
            "facet " + facets[f].id + " has " + std::to_string(facet_items[f].size()) + " items, expected " +
                std::to_string(items_per_facet));
  }
  const size_t facets_per_trait = trait_facets[0].size();
  for (int t = 0; t < n_traits(); ++t) {
    if (trait_facets[t].size() != facets_per_trait || facets_per_trait == 0)
      raise(errc::bad_cardinality,
            "trait " + trait_ids[t] + " has " + std::to_string(trait_facets[t].size()) + " facets, expected " +
                std::to_string(facets_per_trait));
  }
}

ScoringKey parse_scoring_key(const std::string& json_text, bool full_bfi2) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("scoring key: invalid JSON: ") + e.what());
  }

  ScoringKey key;
  try {
    if (j.contains("likert")) {
      key.likert_min = j["likert"].value("min", 1.0);
      key.likert_max = j["likert"].value("max", 5.0);
    }
    for (const auto& t : j.at("traits")) key.trait_ids.push_back(t.get<std::string>());
    for (const auto& f : j.at("facets"))
      key.facets.push_back({f.at("id").get<std::string>(), f.at("trait").get<std::string>()});
    for (const auto& it : j.at("items"))
      key.items.push_back(
          {it.at("id").get<std::string>(), it.at("facet").get<std::string>(), it.value("reversed", false)});
  } catch (const json::exception& e) {
    raise(errc::io_error, std::string("scoring key: bad schema: ") + e.what());
  }

  key.finalize();

  if (full_bfi2) {
    if (key.n_items() != 60 || key.n_facets() != 15 || key.n_traits() != 5 ||
        key.facet_items[0].size() != 4 || key.trait_facets[0].size() != 3)
      raise(errc::bad_cardinality, "full BFI-2 key must have 60 items, 15 facets (4 items each), 5 traits (3 facets each)");
  }
  return key;
}

ScoringKey load_scoring_key(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise(errc::io_error, "cannot open scoring key: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_scoring_key(ss.str(), true);
}

void PersonalityVector::check(const ScoringKey& key) const {
  if (scores.size() != key.size_at(level))
    raise(errc::level_mismatch, "vector length " + std::to_string(scores.size()) + " does not match level " +
                                    to_string(level) + " (" + std::to_string(key.size_at(level)) + ")");
}

double reverse_code(double x, const ScoringKey& key) {
  if (!(x >= key.likert_min && x <= key.likert_max))
    raise(errc::out_of_range, "score " + std::to_string(x) + " outside Likert bounds");
  return (key.likert_min + key.likert_max) - x;
}

namespace {

// Reversal used on prediction vectors: predictions may stray outside the
// Likert bounds, so the affine flip is applied unchecked.
double flip(double x, const ScoringKey& key) { return (key.likert_min + key.likert_max) - x; }

}  // namespace

PersonalityVector nuances_to_facets(const PersonalityVector& v, const ScoringKey& key) {
  if (v.level != Level::Nuance) raise(errc::level_mismatch, "nuances_to_facets needs a nuance-level vector");
  v.check(key);
  PersonalityVector out;
  out.level = Level::Facet;
  out.subject = v.subject;
  out.scores.resize(key.n_facets());
  for (int f = 0; f < key.n_facets(); ++f) {
    double sum = 0.0;
    for (int i : key.facet_items[f]) {
      const double x = v.scores[i];
      sum += key.items[i].reversed ? flip(x, key) : x;
    }
    out.scores[f] = sum / static_cast<double>(key.facet_items[f].size());
  }
  return out;
}

PersonalityVector facets_to_traits(const PersonalityVector& v, const ScoringKey& key) {
  if (v.level != Level::Facet) raise(errc::level_mismatch, "facets_to_traits needs a facet-level vector");
  v.check(key);
  PersonalityVector out;
  out.level = Level::Trait;
  out.subject = v.subject;
  out.scores.resize(key.n_traits());
  for (int t = 0; t < key.n_traits(); ++t) {
    double sum = 0.0;
    for (int f : key.trait_facets[t]) sum += v.scores[f];
    out.scores[t] = sum / static_cast<double>(key.trait_facets[t].size());
  }
  return out;
}

PersonalityVector nuances_to_traits(const PersonalityVector& v, const ScoringKey& key) {
  if (v.level != Level::Nuance) raise(errc::level_mismatch, "nuances_to_traits needs a nuance-level vector");
  v.check(key);
  PersonalityVector out;
  out.level = Level::Trait;
  out.subject = v.subject;
  out.scores.resize(key.n_traits());
  for (int t = 0; t < key.n_traits(); ++t) {
    double sum = 0.0;
    for (int i : key.trait_items[t]) {
      const double x = v.scores[i];
      sum += key.items[i].reversed ? flip(x, key) : x;
    }
    out.scores[t] = sum / static_cast<double>(key.trait_items[t].size());
  }
  return out;
}

PersonalityVector to_traits(const PersonalityVector& v, const ScoringKey& key) {
  switch (v.level) {
    case Level::Nuance: return nuances_to_traits(v, key);
    case Level::Facet: return facets_to_traits(v, key);
    case Level::Trait: {
      v.check(key);
      return v;
    }
  }
  raise(errc::level_mismatch, "unknown level");
}

PersonalityVector collapse_sessions(const std::vector<PersonalityVector>& preds, CollapseStrategy strategy) {
  if (preds.empty()) raise(errc::empty_list, "collapse_sessions: empty prediction list");
  const Level level = preds[0].level;
  const Eigen::Index n = preds[0].scores.size();
  for (const auto& p : preds) {
    if (p.level != level || p.scores.size() != n)
      raise(errc::mixed_levels, "collapse_sessions: predictions at mixed levels");
  }

  PersonalityVector out;
  out.level = level;
  out.subject = preds[0].subject;
  out.scores.resize(n);
  if (strategy == CollapseStrategy::Mean) {
    out.scores.setZero();
    for (const auto& p : preds) out.scores += p.scores;
    out.scores /= static_cast<double>(preds.size());
  } else {
    std::vector<double> column(preds.size());
    for (Eigen::Index j = 0; j < n; ++j) {
      for (size_t s = 0; s < preds.size(); ++s) column[s] = preds[s].scores[j];
      std::sort(column.begin(), column.end());
      const size_t m = column.size();
      out.scores[j] = (m % 2 == 1) ? column[m / 2] : 0.5 * (column[m / 2 - 1] + column[m / 2]);
    }
  }
  return out;
}

PersonalityVector to_trait_level(const std::vector<PersonalityVector>& preds, const ScoringKey& key,
                                 AggregationOrder order, CollapseStrategy strategy) {
  if (preds.empty()) raise(errc::empty_list, "to_trait_level: empty prediction list");
  if (order == AggregationOrder::ConvertThenCollapse) {
    std::vector<PersonalityVector> traits;
    traits.reserve(preds.size());
    for (const auto& p : preds) traits.push_back(to_traits(p, key));
    return collapse_sessions(traits, strategy);
  }
  return to_traits(collapse_sessions(preds, strategy), key);
}

std::map<std::string, PersonalityVector> load_labels_csv(const std::string& path, const ScoringKey& key) {
  std::ifstream f(path);
  if (!f) raise(errc::io_error, "cannot open labels CSV: " + path);

  std::string header;
  if (!std::getline(f, header)) raise(errc::empty_file, "labels CSV is empty: " + path);
  if (!header.empty() && header.back() == '\r') header.pop_back();

  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
  }
  if (cols.empty() || cols[0] != "participant_id")
    raise(errc::missing_column, "labels CSV must start with participant_id column");

  // Map item id -> column position.
  std::vector<int> item_col(key.n_items(), -1);
  for (int i = 0; i < key.n_items(); ++i) {
    for (size_t c = 1; c < cols.size(); ++c) {
      if (cols[c] == key.items[i].id) {
        item_col[i] = static_cast<int>(c);
        break;
      }
    }
    if (item_col[i] < 0) raise(errc::missing_column, "labels CSV missing item column " + key.items[i].id);
  }

  std::map<std::string, PersonalityVector> out;
  std::string line;
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    {
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
    }
    if (cells.size() != cols.size())
      raise(errc::io_error, "labels CSV row " + std::to_string(lineno) + ": expected " +
                                std::to_string(cols.size()) + " cells, got " + std::to_string(cells.size()));
    PersonalityVector v;
    v.level = Level::Nuance;
    v.subject = cells[0];
    v.scores.resize(key.n_items());
    for (int i = 0; i < key.n_items(); ++i) {
      const std::string& cell = cells[static_cast<size_t>(item_col[i])];
      double x = 0.0;
      try {
        size_t pos = 0;
        x = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        raise(errc::io_error, "labels CSV row " + std::to_string(lineno) + ": bad value '" + cell + "'");
      }
      if (x != std::floor(x) || x < key.likert_min || x > key.likert_max)
        raise(errc::out_of_range, "labels CSV row " + std::to_string(lineno) + ": item value " + cell +
                                      " outside integer Likert range");
      v.scores[i] = x;
    }
    if (!out.emplace(v.subject, std::move(v)).second)
      raise(errc::io_error, "labels CSV: duplicate participant " + cells[0]);
  }
  return out;
}

}  // namespace persona::bfi2
