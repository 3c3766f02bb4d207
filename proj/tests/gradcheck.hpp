#pragma once

#include "persona/autodiff.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testsupport {

// Central finite differences against the tape's reverse-mode gradients.
// `build` must construct a fresh 1x1 loss from the given leaf values each
// time it is called.
struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

inline GradCheckResult gradient_check(
    const std::function<persona::ad::Var(persona::ad::Tape&, const std::vector<persona::Matrix>&)>& build,
    std::vector<persona::Matrix> leaves, double eps = 1e-5, int max_entries_per_leaf = 0,
    std::uint64_t sample_seed = 1234) {
  using persona::Matrix;

  // Analytic gradients. The builder is expected to create its leaves with
  // ad::leaf in order, so leaf node indices are 0..n-1.
  persona::ad::Tape tape;
  persona::ad::Var loss = build(tape, leaves);
  tape.backward(loss.idx);
  std::vector<Matrix> analytic;
  for (size_t i = 0; i < leaves.size(); ++i) analytic.push_back(tape.grad(static_cast<int>(i)));

  std::mt19937_64 rng(sample_seed);
  GradCheckResult result;
  for (size_t l = 0; l < leaves.size(); ++l) {
    std::vector<Eigen::Index> entries;
    const Eigen::Index size = leaves[l].size();
    if (max_entries_per_leaf <= 0 || size <= max_entries_per_leaf) {
      for (Eigen::Index i = 0; i < size; ++i) entries.push_back(i);
    } else {
      for (int i = 0; i < max_entries_per_leaf; ++i)
        entries.push_back(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(size)));
    }
    for (Eigen::Index e : entries) {
      const double saved = leaves[l](e);
      leaves[l](e) = saved + eps;
      persona::ad::Tape tp;
      const double up = build(tp, leaves).value()(0, 0);
      leaves[l](e) = saved - eps;
      persona::ad::Tape tm;
      const double down = build(tm, leaves).value()(0, 0);
      leaves[l](e) = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l](e);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.checked;
    }
  }
  return result;
}

inline persona::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  persona::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = gauss(rng);
  return m;
}

}  // namespace testsupport
