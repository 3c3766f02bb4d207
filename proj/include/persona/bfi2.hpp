#pragma once

#include "persona/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace persona::bfi2 {

enum class Level { Nuance, Facet, Trait };

constexpr int level_size(Level l) {
  switch (l) {
    case Level::Nuance: return 60;
    case Level::Facet: return 15;
    case Level::Trait: return 5;
  }
  return 0;
}

std::string to_string(Level l);
Level level_from_string(const std::string& s);

struct ItemSpec {
  std::string id;
  std::string facet_id;
  bool reversed = false;
};

struct FacetSpec {
  std::string id;
  std::string trait_id;
};

// Hierarchy map: items -> facets -> traits plus reverse-coding flags and
// Likert bounds. The generic cardinalities (items per facet, facets per
// trait) are derived from the file and validated, so synthetic mini-keys can
// reuse all of the aggregation machinery.
struct ScoringKey {
  double likert_min = 1.0;
  double likert_max = 5.0;
  std::vector<std::string> trait_ids;  // canonical order, defines Trait vector layout
  std::vector<FacetSpec> facets;       // defines Facet vector layout
  std::vector<ItemSpec> items;         // defines Nuance vector layout

  // Derived index tables, built by finalize().
  std::vector<int> item_to_facet;                // item index -> facet index
  std::vector<int> facet_to_trait;               // facet index -> trait index
  std::vector<std::vector<int>> facet_items;     // facet index -> item indices
  std::vector<std::vector<int>> trait_facets;    // trait index -> facet indices
  std::vector<std::vector<int>> trait_items;     // trait index -> item indices

  int n_items() const { return static_cast<int>(items.size()); }
  int n_facets() const { return static_cast<int>(facets.size()); }
  int n_traits() const { return static_cast<int>(trait_ids.size()); }
  int size_at(Level l) const;
  std::vector<std::string> labels_at(Level l) const;

  // Builds the index tables and validates structure: unique ids, uniform
  // items-per-facet and facets-per-trait cardinality (4 and 3 for the full
  // BFI-2 key; mini-keys may use other uniform counts).
  void finalize();
};

// Loads a scoring-key JSON file and validates the full BFI-2 cardinalities
// (60 items, 4 per facet, 3 facets per trait, 5 traits).
ScoringKey load_scoring_key(const std::string& path);

// Parses key JSON from a string; full_bfi2 demands the 60/15/5 shape.
ScoringKey parse_scoring_key(const std::string& json_text, bool full_bfi2 = true);

// Scores at one hierarchy level for one subject or prediction.
struct PersonalityVector {
  Level level = Level::Trait;
  Vector scores;
  std::string subject;

  void check(const ScoringKey& key) const;  // length matches level under key
};

// Standard Likert reversal: (min + max) - x. Throws out_of_range if x is
// outside the key's Likert bounds.
double reverse_code(double x, const ScoringKey& key);

PersonalityVector nuances_to_facets(const PersonalityVector& v, const ScoringKey& key);
PersonalityVector facets_to_traits(const PersonalityVector& v, const ScoringKey& key);
PersonalityVector nuances_to_traits(const PersonalityVector& v, const ScoringKey& key);

// Converts a vector at any level to the trait level (identity for traits).
PersonalityVector to_traits(const PersonalityVector& v, const ScoringKey& key);

enum class CollapseStrategy { Mean, Median };
enum class AggregationOrder { ConvertThenCollapse, CollapseThenConvert };

CollapseStrategy strategy_from_string(const std::string& s);
AggregationOrder order_from_string(const std::string& s);

// Elementwise mean or median over repeated predictions of one subject at one
// level.
PersonalityVector collapse_sessions(const std::vector<PersonalityVector>& preds,
                                    CollapseStrategy strategy);

// Unifies repeated per-session predictions into a single trait-level vector.
// ConvertThenCollapse converts each prediction to traits first (the main
// pipeline); CollapseThenConvert collapses at the native level first.
PersonalityVector to_trait_level(const std::vector<PersonalityVector>& preds,
                                 const ScoringKey& key,
                                 AggregationOrder order = AggregationOrder::ConvertThenCollapse,
                                 CollapseStrategy strategy = CollapseStrategy::Mean);

// Per-participant ground-truth nuance vectors from a labels CSV
// (participant_id,item_01..item_60 with integer values within Likert bounds).
std::map<std::string, PersonalityVector> load_labels_csv(const std::string& path,
                                                         const ScoringKey& key);

}  // namespace persona::bfi2
