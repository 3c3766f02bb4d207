#include "persona/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace persona::ad {

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) raise(errc::shape_mismatch, "operands live on different tapes");
}

[[noreturn]] void shape_error(const char* op, Var a, Var b) {
  raise(errc::shape_mismatch, std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                                  std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                  std::to_string(b.cols()));
}

}  // namespace

int Tape::push(Matrix value, std::function<void(Tape&, const Matrix&)> backprop) {
  Node node;
  node.grad = Matrix::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(int root) {
  auto& r = nodes_[static_cast<size_t>(root)];
  r.grad.setOnes();
  for (int i = root; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.backprop) n.backprop(*this, n.grad);
  }
}

Var leaf(Tape& tape, Matrix value) { return {&tape, tape.push(std::move(value))}; }

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Tape& t = *a.tape;
  const int ai = a.idx, bi = b.idx;
  Matrix v = a.value() * b.value();
  int idx = t.push(std::move(v), [ai, bi](Tape& tp, const Matrix& g) {
    tp.grad(ai).noalias() += g * tp.value(bi).transpose();
    tp.grad(bi).noalias() += tp.value(ai).transpose() * g;
  });
  return {&t, idx};
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  Tape& t = *a.tape;
  const int ai = a.idx, bi = b.idx;
  Matrix v = a.value() * b.value().transpose();
  int idx = t.push(std::move(v), [ai, bi](Tape& tp, const Matrix& g) {
    tp.grad(ai).noalias() += g * tp.value(bi);
    tp.grad(bi).noalias() += g.transpose() * tp.value(ai);
  });
  return {&t, idx};
}

Var matmul_nt_scaled(Var a, Var b, double s) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) shape_error("matmul_nt_scaled", a, b);
  Tape& t = *a.tape;
  const int ai = a.idx, bi = b.idx;
  Matrix v = s * (a.value() * b.value().transpose());
  int idx = t.push(std::move(v), [ai, bi, s](Tape& tp, const Matrix& g) {
    tp.grad(ai).noalias() += s * (g * tp.value(bi));
    tp.grad(bi).noalias() += s * (g.transpose() * tp.value(ai));
  });
  return {&t, idx};
}

Var affine(Var x, Var w, Var b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  if (x.cols() != w.rows()) shape_error("affine", x, w);
  if (b.rows() != 1 || b.cols() != w.cols()) shape_error("affine", w, b);
  Tape& t = *x.tape;
  const int xi = x.idx, wi = w.idx, bi = b.idx;
  Matrix v = x.value() * w.value();
  v.rowwise() += b.value().row(0);
  int idx = t.push(std::move(v), [xi, wi, bi](Tape& tp, const Matrix& g) {
    tp.grad(xi).noalias() += g * tp.value(wi).transpose();
    tp.grad(wi).noalias() += tp.value(xi).transpose() * g;
    tp.grad(bi) += g.colwise().sum();
  });
  return {&t, idx};
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a, b);
  Tape& t = *a.tape;
  const int ai = a.idx, bi = b.idx;
  int idx = t.push(a.value() + b.value(), [ai, bi](Tape& tp, const Matrix& g) {
    tp.grad(ai) += g;
    tp.grad(bi) += g;
  });
  return {&t, idx};
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a, b);
  Tape& t = *a.tape;
  const int ai = a.idx, bi = b.idx;
  int idx = t.push(a.value() - b.value(), [ai, bi](Tape& tp, const Matrix& g) {
    tp.grad(ai) += g;
    tp.grad(bi) -= g;
  });
  return {&t, idx};
}

Var add_rowvec(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_rowvec", a, row);
  Tape& t = *a.tape;
  const int ai = a.idx, ri = row.idx;
  Matrix v = a.value().rowwise() + row.value().row(0);
  int idx = t.push(std::move(v), [ai, ri](Tape& tp, const Matrix& g) {
    tp.grad(ai) += g;
    tp.grad(ri) += g.colwise().sum();
  });
  return {&t, idx};
}

Var add_const(Var a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    raise(errc::shape_mismatch, "add_const: constant shape mismatch");
  Tape& t = *a.tape;
  const int ai = a.idx;
  int idx = t.push(a.value() + c, [ai](Tape& tp, const Matrix& g) { tp.grad(ai) += g; });
  return {&t, idx};
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  const int ai = a.idx;
  int idx = t.push(a.value() * s, [ai, s](Tape& tp, const Matrix& g) { tp.grad(ai) += s * g; });
  return {&t, idx};
}

Var mul_const(Var a, const Matrix& mask) {
  if (a.rows() != mask.rows() || a.cols() != mask.cols())
    raise(errc::shape_mismatch, "mul_const: mask shape mismatch");
  Tape& t = *a.tape;
  const int ai = a.idx;
  int idx = t.push(a.value().cwiseProduct(mask),
                   [ai, mask](Tape& tp, const Matrix& g) { tp.grad(ai) += g.cwiseProduct(mask); });
  return {&t, idx};
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const int ai = a.idx;
  Matrix y = (a.value().colwise() - a.value().rowwise().maxCoeff()).array().exp();
  y.array().colwise() /= y.rowwise().sum().array();
  int idx = t.push(std::move(y));
  t.set_backprop(idx, [ai, idx](Tape& tp, const Matrix& g) {
    const Matrix& out = tp.value(idx);
    const Vector dots = (g.cwiseProduct(out)).rowwise().sum();
    tp.grad(ai) += (g.colwise() - dots).cwiseProduct(out);
  });
  return {&t, idx};
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  const int ai = a.idx;
  const double k = std::sqrt(2.0 / std::numbers::pi);
  const auto& x = a.value().array();
  Matrix y = 0.5 * x * (1.0 + (k * (x + 0.044715 * x.cube())).tanh());
  // The derivative is recomputed from the parent value during backward; the
  // tape is memory-bound, not compute-bound.
  int idx = t.push(std::move(y), [ai, k](Tape& tp, const Matrix& g) {
    const auto& x = tp.value(ai).array();
    const Matrix th = (k * (x + 0.044715 * x.cube())).tanh();
    const auto du = k * (1.0 + 3.0 * 0.044715 * x.square());
    tp.grad(ai).array() +=
        g.array() * (0.5 * (1.0 + th.array()) + 0.5 * x * (1.0 - th.array().square()) * du);
  });
  return {&t, idx};
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
    raise(errc::shape_mismatch, "layer_norm_rows: gain/bias must be 1 x cols");
  Tape& t = *x.tape;
  const int xi = x.idx, gi = gain.idx, bi = bias.idx;
  const Eigen::Index n = x.cols();

  Matrix xhat(x.rows(), n);
  Eigen::VectorXd inv_sd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sd[r] = inv;
    xhat.row(r) = (x.value().row(r).array() - mu) * inv;
  }
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();

  int idx = t.push(std::move(y), [xi, gi, bi, xhat, inv_sd](Tape& tp, const Matrix& g) {
    tp.grad(gi) += (g.cwiseProduct(xhat)).colwise().sum();
    tp.grad(bi) += g.colwise().sum();
    const Eigen::RowVectorXd gain_row = tp.value(gi).row(0);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain_row);
      const double mean_dxhat = dxhat.mean();
      const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).mean();
      tp.grad(xi).row(r) +=
          inv_sd[r] * (dxhat.array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat).matrix();
    }
  });
  return {&t, idx};
}

Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) raise(errc::shape_mismatch, "vcat: no parts");
  Tape& t = *parts[0].tape;
  Eigen::Index rows = 0;
  const Eigen::Index c = parts[0].cols();
  for (const Var& p : parts) {
    if (p.cols() != c) raise(errc::shape_mismatch, "vcat: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, c);
  std::vector<int> idxs;
  std::vector<Eigen::Index> sizes;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    idxs.push_back(p.idx);
    sizes.push_back(p.rows());
    at += p.rows();
  }
  int idx = t.push(std::move(v), [idxs, sizes](Tape& tp, const Matrix& g) {
    Eigen::Index at = 0;
    for (size_t i = 0; i < idxs.size(); ++i) {
      tp.grad(idxs[i]) += g.middleRows(at, sizes[i]);
      at += sizes[i];
    }
  });
  return {&t, idx};
}

Var hcat(const std::vector<Var>& parts) {
  if (parts.empty()) raise(errc::shape_mismatch, "hcat: no parts");
  Tape& t = *parts[0].tape;
  Eigen::Index cols_total = 0;
  const Eigen::Index r = parts[0].rows();
  for (const Var& p : parts) {
    if (p.rows() != r) raise(errc::shape_mismatch, "hcat: row mismatch");
    cols_total += p.cols();
  }
  Matrix v(r, cols_total);
  std::vector<int> idxs;
  std::vector<Eigen::Index> sizes;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    idxs.push_back(p.idx);
    sizes.push_back(p.cols());
    at += p.cols();
  }
  int idx = t.push(std::move(v), [idxs, sizes](Tape& tp, const Matrix& g) {
    Eigen::Index at = 0;
    for (size_t i = 0; i < idxs.size(); ++i) {
      tp.grad(idxs[i]) += g.middleCols(at, sizes[i]);
      at += sizes[i];
    }
  });
  return {&t, idx};
}

Var cols(Var a, Eigen::Index offset, Eigen::Index width) {
  if (offset < 0 || width <= 0 || offset + width > a.cols())
    raise(errc::shape_mismatch, "cols: slice out of range");
  Tape& t = *a.tape;
  const int ai = a.idx;
  int idx = t.push(a.value().middleCols(offset, width), [ai, offset, width](Tape& tp, const Matrix& g) {
    tp.grad(ai).middleCols(offset, width) += g;
  });
  return {&t, idx};
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const int ai = a.idx;
  const auto n = static_cast<double>(a.rows());
  Matrix v = a.value().colwise().mean();
  int idx = t.push(std::move(v), [ai, n](Tape& tp, const Matrix& g) {
    tp.grad(ai).array() += (g.array() / n).replicate(tp.grad(ai).rows(), 1);
  });
  return {&t, idx};
}

Var mse_against(Var pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    raise(errc::length_mismatch, "mse_against: shape mismatch");
  Tape& t = *pred.tape;
  const int pi = pred.idx;
  const Matrix diff = pred.value() - target;
  const auto n = static_cast<double>(diff.size());
  Matrix v(1, 1);
  v(0, 0) = diff.array().square().sum() / n;
  int idx = t.push(std::move(v), [pi, diff, n](Tape& tp, const Matrix& g) {
    tp.grad(pi) += (2.0 / n) * g(0, 0) * diff;
  });
  return {&t, idx};
}

}  // namespace persona::ad
