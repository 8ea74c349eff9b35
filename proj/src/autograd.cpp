#include "isostruct/autograd.hpp"

#include <cmath>
#include <limits>

#include "isostruct/error.hpp"
#include "isostruct/subspace.hpp"

namespace isostruct::ad {

Var Tape::variable(Matrix value) { return push(std::move(value), record_, {}); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, {}); }

Var Tape::external(const Matrix& value, bool needs_grad) {
  Node node;
  node.external = &value;
  node.needs_grad = record_ && needs_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(const Matrix&)> backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = record_ && needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0)
    node.grad = g;
  else
    node.grad += g;
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.grad.size() == 0) {
    const Matrix& val = value(v);
    return Matrix::Zero(val.rows(), val.cols());
  }
  return node.grad;
}

void Tape::backward(Var out) {
  if (!record_) throw Error(Errc::InvalidArgument, "backward() on a non-recording tape");
  Node& root = nodes_[static_cast<std::size_t>(out.id())];
  if (value(out).size() != 1) throw Error(Errc::ShapeMismatch, "backward() needs a 1x1 output");
  if (!root.needs_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (auto id = static_cast<std::ptrdiff_t>(out.id()); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad || !node.backward || node.grad.size() == 0) continue;
    node.backward(node.grad);
  }
}

namespace {

Tape& tape_of(Var a) { return *a.tape(); }

bool any_grad(std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (v.tape()->needs_grad(v)) return true;
  return false;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(Errc::ShapeMismatch, std::string(op) + ": operand shapes differ");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tape& t = tape_of(a);
  return t.push(a.value() + b.value(), any_grad({a, b}), [a, b, &t](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tape& t = tape_of(a);
  return t.push(a.value() - b.value(), any_grad({a, b}), [a, b, &t](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tape& t = tape_of(a);
  return t.push(a.value().cwiseProduct(b.value()), any_grad({a, b}), [a, b, &t](const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  return t.push(c * a.value(), any_grad({a}), [a, c, &t](const Matrix& g) { t.accumulate(a, c * g); });
}

Var add_scalar(Var a, double c) {
  Tape& t = tape_of(a);
  return t.push(a.value().array() + c, any_grad({a}), [a, &t](const Matrix& g) { t.accumulate(a, g); });
}

Var reciprocal(Var a) {
  Tape& t = tape_of(a);
  return t.push(a.value().cwiseInverse(), any_grad({a}), [a, &t](const Matrix& g) {
    const Matrix& x = a.value();
    t.accumulate(a, -(g.array() / (x.array() * x.array())).matrix());
  });
}

Var silu(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix y = x.unaryExpr([](double v) { return v * sigmoid(v); });
  return t.push(std::move(y), any_grad({a}), [a, &t](const Matrix& g) {
    const Matrix d = a.value().unaryExpr([](double v) {
      const double s = sigmoid(v);
      return s * (1.0 + v * (1.0 - s));
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error(Errc::ShapeMismatch, "matmul: inner dimensions differ");
  Tape& t = tape_of(a);
  Matrix y = a.value() * b.value();
  return t.push(std::move(y), any_grad({a, b}), [a, b, &t](const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var linear(Var x, Var w, Var b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw Error(Errc::ShapeMismatch, "linear: incompatible shapes");
  Tape& t = tape_of(x);
  Matrix y = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  return t.push(std::move(y), any_grad({x, w, b}), [x, w, b, &t](const Matrix& g) {
    if (t.needs_grad(x)) t.accumulate(x, g * w.value().transpose());
    if (t.needs_grad(w)) t.accumulate(w, x.value().transpose() * g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(Errc::InvalidArgument, "concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  for (Var p : parts) {
    if (p.rows() != rows) throw Error(Errc::ShapeMismatch, "concat_cols: row counts differ");
    cols += p.cols();
    grad = grad || t.needs_grad(p);
  }
  Matrix y(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    y.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(y), grad, [inputs, &t](const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const Eigen::Index c = p.cols();
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(off, c));
      off += c;
    }
  });
}

Var gather_rows(Var x, std::span<const int> idx) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(static_cast<Eigen::Index>(k)) = xv.row(idx[k]);
  std::vector<int> index(idx.begin(), idx.end());
  return t.push(std::move(y), any_grad({x}), [x, index, &t](const Matrix& g) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t k = 0; k < index.size(); ++k) gx.row(index[k]) += g.row(static_cast<Eigen::Index>(k));
    t.accumulate(x, gx);
  });
}

Var scatter_add_rows(Var x, std::span<const int> idx, Eigen::Index n) {
  if (static_cast<std::size_t>(x.rows()) != idx.size())
    throw Error(Errc::ShapeMismatch, "scatter_add_rows: index length differs from rows");
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  Matrix y = Matrix::Zero(n, xv.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) y.row(idx[k]) += xv.row(static_cast<Eigen::Index>(k));
  std::vector<int> index(idx.begin(), idx.end());
  return t.push(std::move(y), any_grad({x}), [x, index, &t](const Matrix& g) {
    Matrix gx(static_cast<Eigen::Index>(index.size()), g.cols());
    for (std::size_t k = 0; k < index.size(); ++k) gx.row(static_cast<Eigen::Index>(k)) = g.row(index[k]);
    t.accumulate(x, gx);
  });
}

Var segment_softmax(Var logits, std::span<const int> segment, Eigen::Index n_segments) {
  if (static_cast<std::size_t>(logits.rows()) != segment.size())
    throw Error(Errc::ShapeMismatch, "segment_softmax: segment length differs from rows");
  Tape& t = tape_of(logits);
  const Matrix& a = logits.value();
  const Eigen::Index cols = a.cols();
  Matrix max = Matrix::Constant(n_segments, cols, -std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < segment.size(); ++k)
    max.row(segment[k]) = max.row(segment[k]).cwiseMax(a.row(static_cast<Eigen::Index>(k)));
  Matrix y(a.rows(), cols);
  Matrix denom = Matrix::Zero(n_segments, cols);
  for (std::size_t k = 0; k < segment.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    y.row(r) = (a.row(r) - max.row(segment[k])).array().exp().matrix();
    denom.row(segment[k]) += y.row(r);
  }
  for (std::size_t k = 0; k < segment.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    y.row(r) = y.row(r).cwiseQuotient(denom.row(segment[k]));
  }
  std::vector<int> seg(segment.begin(), segment.end());
  const bool grad = any_grad({logits}) && t.recording();
  Matrix yv = grad ? y : Matrix();
  return t.push(std::move(y), grad, [logits, seg, yv, n_segments, &t](const Matrix& g) {
    Matrix dot = Matrix::Zero(n_segments, yv.cols());
    for (std::size_t k = 0; k < seg.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      dot.row(seg[k]) += g.row(r).cwiseProduct(yv.row(r));
    }
    Matrix ga(yv.rows(), yv.cols());
    for (std::size_t k = 0; k < seg.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      ga.row(r) = yv.row(r).cwiseProduct(g.row(r) - dot.row(seg[k]));
    }
    t.accumulate(logits, ga);
  });
}

Var head_scale(Var weights, Var values) {
  const Eigen::Index heads = weights.cols();
  if (weights.rows() != values.rows() || heads == 0 || values.cols() % heads != 0)
    throw Error(Errc::ShapeMismatch, "head_scale: incompatible shapes");
  const Eigen::Index d = values.cols() / heads;
  Tape& t = tape_of(weights);
  const Matrix& w = weights.value();
  Matrix y = values.value();
  for (Eigen::Index h = 0; h < heads; ++h)
    y.middleCols(h * d, d).array().colwise() *= w.col(h).array();
  return t.push(std::move(y), any_grad({weights, values}), [weights, values, heads, d, &t](const Matrix& g) {
    const Matrix& wv = weights.value();
    const Matrix& vv = values.value();
    if (t.needs_grad(values)) {
      Matrix gv = g;
      for (Eigen::Index h = 0; h < heads; ++h)
        gv.middleCols(h * d, d).array().colwise() *= wv.col(h).array();
      t.accumulate(values, gv);
    }
    if (t.needs_grad(weights)) {
      Matrix gw(wv.rows(), heads);
      for (Eigen::Index h = 0; h < heads; ++h)
        gw.col(h) = g.middleCols(h * d, d).cwiseProduct(vv.middleCols(h * d, d)).rowwise().sum();
      t.accumulate(weights, gw);
    }
  });
}

Var mul_rowwise(Var x, Var s) {
  if (s.cols() != 1 || s.rows() != x.rows())
    throw Error(Errc::ShapeMismatch, "mul_rowwise: scale must be rows×1");
  Tape& t = tape_of(x);
  Matrix y = x.value();
  y.array().colwise() *= s.value().col(0).array();
  return t.push(std::move(y), any_grad({x, s}), [x, s, &t](const Matrix& g) {
    if (t.needs_grad(x)) {
      Matrix gx = g;
      gx.array().colwise() *= s.value().col(0).array();
      t.accumulate(x, gx);
    }
    if (t.needs_grad(s)) t.accumulate(s, g.cwiseProduct(x.value()).rowwise().sum());
  });
}

Var row_sum(Var x) {
  Tape& t = tape_of(x);
  Matrix y = x.value().rowwise().sum();
  return t.push(std::move(y), any_grad({x}), [x, &t](const Matrix& g) {
    Matrix gx(x.rows(), x.cols());
    gx.colwise() = g.col(0);
    t.accumulate(x, gx);
  });
}

Var layer_norm(Var x, double eps) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const auto d = static_cast<double>(xv.cols());
  Matrix y(xv.rows(), xv.cols());
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().sum() / d;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    y.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  const Matrix yv = y;
  return t.push(std::move(y), any_grad({x}), [x, yv, inv_std, d, &t](const Matrix& g) {
    Matrix gx(yv.rows(), yv.cols());
    for (Eigen::Index r = 0; r < yv.rows(); ++r) {
      const double g_mean = g.row(r).sum() / d;
      const double gy_mean = g.row(r).dot(yv.row(r)) / d;
      gx.row(r) = inv_std[r] * (g.row(r).array() - g_mean - yv.row(r).array() * gy_mean).matrix();
    }
    t.accumulate(x, gx);
  });
}

Var sum_squares(Var x) {
  Tape& t = tape_of(x);
  Matrix y(1, 1);
  y(0, 0) = x.value().squaredNorm();
  return t.push(std::move(y), any_grad({x}), [x, &t](const Matrix& g) {
    t.accumulate(x, (2.0 * g(0, 0)) * x.value());
  });
}

namespace {

Matrix project_rows(const Matrix& x, const MassWeights& w) {
  const auto& m = w.normalized_masses();
  Eigen::RowVectorXd com = Eigen::RowVectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) com += m[static_cast<std::size_t>(i)] * x.row(i);
  com /= w.squared_norm();
  Matrix out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) -= m[static_cast<std::size_t>(i)] * com;
  return out;
}

}  // namespace

Var project_zero_com(Var x, const MassWeights& w) {
  if (x.cols() != 3 || static_cast<std::size_t>(x.rows()) != w.size())
    throw Error(Errc::ShapeMismatch, "project_zero_com: expected N×3 matching the weights");
  Tape& t = tape_of(x);
  const Coords in = x.value();
  Matrix y = isostruct::project_zero_com(in, w);
  // The projection is symmetric, so its adjoint is itself.
  return t.push(std::move(y), any_grad({x}), [x, &w, &t](const Matrix& g) {
    t.accumulate(x, project_rows(g, w));
  });
}

}  // namespace isostruct::ad
