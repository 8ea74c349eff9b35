#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

namespace isostruct {
class MassWeights;
}

namespace isostruct::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records matrix operations for reverse accumulation. With
/// `record = false` only forward values are computed (inference mode).
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Matrix value);
  Var constant(Matrix value);
  /// Leaf that refers to `value` without copying it; `value` must outlive
  /// the tape.
  Var external(const Matrix& value, bool needs_grad);

  const Matrix& value(Var v) const {
    const Node& node = nodes_[static_cast<std::size_t>(v.id())];
    return node.external ? *node.external : node.value;
  }
  /// Gradient after backward(); a zero matrix if nothing flowed into v.
  Matrix grad(Var v) const;
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1×1 output and runs the recorded
  /// backward functions in reverse order.
  void backward(Var out);

  // Used by the operation implementations.
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].needs_grad; }
  Var push(Matrix value, bool needs_grad, std::function<void(const Matrix&)> backward);
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(const Matrix&)> backward;
  };
  std::vector<Node> nodes_;
  bool record_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// Elementwise and shape operations. All inputs must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var reciprocal(Var a);
Var silu(Var a);
Var matmul(Var a, Var b);
/// x w + b with b a 1×out row broadcast over rows.
Var linear(Var x, Var w, Var b);
Var concat_cols(std::span<const Var> parts);
/// Row k of the result is row idx[k] of x.
Var gather_rows(Var x, std::span<const int> idx);
/// Row idx[k] of the n-row result accumulates row k of x.
Var scatter_add_rows(Var x, std::span<const int> idx, Eigen::Index n);
/// Per-column softmax over the rows that share a segment id.
Var segment_softmax(Var logits, std::span<const int> segment, Eigen::Index n_segments);
/// weights is E×H, values is E×(H·d); head h's block of d columns is scaled
/// by weights(:, h).
Var head_scale(Var weights, Var values);
/// x (E×k) times a per-row scalar s (E×1).
Var mul_rowwise(Var x, Var s);
/// E×1 row sums.
Var row_sum(Var x);
/// Row-wise layer normalization without affine parameters.
Var layer_norm(Var x, double eps = 1e-6);
/// 1×1 sum of squared entries.
Var sum_squares(Var x);
/// Orthogonal projection of an N×3 matrix onto the zero weighted-CoM subspace.
Var project_zero_com(Var x, const MassWeights& w);

}  // namespace isostruct::ad
