#pragma once

#include "persona/types.hpp"

#include <functional>
#include <vector>

namespace persona::ad {

// Reverse-mode differentiation tape over dense double matrices. Each
// operation appends a node holding its value and a closure that scatters the
// node's gradient to its parents. backward() replays the closures in reverse
// creation order, which is a valid topological order by construction.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;  // zero-initialized to the value's shape on creation
    std::function<void(Tape&, const Matrix&)> backprop;  // may be empty (leaves)
  };

  int push(Matrix value, std::function<void(Tape&, const Matrix&)> backprop = nullptr);

  // For closures that need the node's own output (e.g. softmax).
  void set_backprop(int idx, std::function<void(Tape&, const Matrix&)> backprop) {
    nodes_[static_cast<size_t>(idx)].backprop = std::move(backprop);
  }

  const Matrix& value(int idx) const { return nodes_[static_cast<size_t>(idx)].value; }
  Matrix& grad(int idx) { return nodes_[static_cast<size_t>(idx)].grad; }
  const Matrix& grad(int idx) const { return nodes_[static_cast<size_t>(idx)].grad; }

  // Seeds the root gradient with ones and propagates backward through every
  // node at or below `root`. The root is normally a 1x1 loss.
  void backward(int root);

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  const Matrix& value() const { return tape->value(idx); }
  const Matrix& grad() const { return tape->grad(idx); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

// Leaf node; gradients accumulate here and are read back after backward().
Var leaf(Tape& tape, Matrix value);

Var matmul(Var a, Var b);     // a.rows x b.cols
Var matmul_nt(Var a, Var b);  // a * b^T
Var matmul_nt_scaled(Var a, Var b, double s);  // s * (a * b^T), fused
Var affine(Var x, Var w, Var b);  // x * w with a broadcast 1 x c bias row
Var add(Var a, Var b);        // same shape
Var sub(Var a, Var b);
Var add_rowvec(Var a, Var row);       // broadcasts a 1 x c row over a's rows
Var add_const(Var a, const Matrix& c);  // constant offset, e.g. positional encoding
Var scale(Var a, double s);
Var mul_const(Var a, const Matrix& mask);  // elementwise product with a constant
Var softmax_rows(Var a);
Var gelu(Var a);  // tanh approximation
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var vcat(const std::vector<Var>& parts);         // stack along rows
Var hcat(const std::vector<Var>& parts);         // stack along columns
Var cols(Var a, Eigen::Index offset, Eigen::Index width);
Var mean_rows(Var a);  // 1 x c
Var mse_against(Var pred, const Matrix& target);  // 1x1 mean squared error

}  // namespace persona::ad
