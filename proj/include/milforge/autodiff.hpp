#pragma once

// Dense reverse-mode automatic differentiation over row-major Eigen matrices.
//
// A Tape records every primitive applied to its nodes. Values are computed
// eagerly; `backward` replays the recorded closures in reverse insertion order
// (which is a valid reverse topological order, since a node can only consume
// nodes created before it). Only the op set used by the MIL heads is provided.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "milforge/error.hpp"
#include "milforge/random.hpp"

namespace milforge::ad {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Mat<double>;

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

// Handle to a node on a tape. Only meaningful for the tape that issued it.
struct Var {
  std::size_t id = 0;
};

template <typename Scalar>
class Tape;

// Gradient buffers produced by one backward pass, one per tape node.
template <typename Scalar>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Mat<Scalar>> g) : grads_(std::move(g)) {}

  const Mat<Scalar>& operator[](Var v) const { return grads_.at(v.id); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<Mat<Scalar>> grads_;
};

template <typename Scalar>
class Tape {
 public:
  using MatrixType = Mat<Scalar>;
  // Accumulates the node's incoming gradient into the gradients of its inputs.
  using BackwardFn = std::function<void(const Tape& tape, Var self, const MatrixType& out_grad,
                                        std::vector<MatrixType>& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  // Constant input; no gradient flows into it.
  Var constant(MatrixType value) { return push(std::move(value), false, {}); }

  // Trainable leaf; its gradient is reported by backward().
  Var parameter(MatrixType value) { return push(std::move(value), true, {}); }

  Var record(MatrixType value, bool requires_grad, BackwardFn fn) {
    return push(std::move(value), requires_grad, std::move(fn));
  }

  const MatrixType& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. The tape is left untouched, so calling
  // this twice yields identical gradients.
  Gradients<Scalar> backward(Var loss) const {
    const MatrixType& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: loss must be 1x1, got " + shape_str(lv));
    }
    std::vector<MatrixType> grads(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      grads[i] = MatrixType::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    }
    grads[loss.id](0, 0) = Scalar(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      n.backward(*this, Var{i}, grads[i], grads);
    }
    return Gradients<Scalar>(std::move(grads));
  }

 private:
  struct Node {
    MatrixType value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(MatrixType value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void require_same_shape(const Mat<Scalar>& a, const Mat<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
Var matmul(Tape<Scalar>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_str(av) + " by " + shape_str(bv));
  }
  Mat<Scalar> out = av * bv;
  const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
  return t.record(std::move(out), ga || gb,
                  [a, b, ga, gb]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                                 const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    if (ga) grads[a.id].noalias() += g * t.value(b).transpose();
                    if (gb) grads[b.id].noalias() += t.value(a).transpose() * g;
                  });
}

template <typename Scalar>
Var add(Tape<Scalar>& t, Var a, Var b) {
  detail::require_same_shape(t.value(a), t.value(b), "add");
  Mat<Scalar> out = t.value(a) + t.value(b);
  const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
  return t.record(std::move(out), ga || gb,
                  [a, b, ga, gb]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                                 const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    if (ga) grads[a.id] += g;
                    if (gb) grads[b.id] += g;
                  });
}

// x (n x m) + bias (1 x m), broadcast down the rows.
template <typename Scalar>
Var add_row_bias(Tape<Scalar>& t, Var x, Var bias) {
  const auto& xv = t.value(x);
  const auto& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row_bias: bias " + shape_str(bv) + " does not broadcast over " +
                     shape_str(xv));
  }
  Mat<Scalar> out = xv.rowwise() + bv.row(0);
  const bool gx = t.requires_grad(x), gb = t.requires_grad(bias);
  return t.record(
      std::move(out), gx || gb,
      [x, bias, gx, gb]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                        const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
        if (gx) grads[x.id] += g;
        if (gb) grads[bias.id] += g.colwise().sum();
      });
}

template <typename Scalar>
Var scale(Tape<Scalar>& t, Var x, Scalar s) {
  Mat<Scalar> out = t.value(x) * s;
  return t.record(
      std::move(out), t.requires_grad(x),
      [x, s]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
             const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) { grads[x.id] += g * s; });
}

template <typename Scalar>
Var transpose(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out = t.value(x).transpose();
  return t.record(
      std::move(out), t.requires_grad(x),
      [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self, const Mat<Scalar>& g,
          std::vector<Mat<Scalar>>& grads) { grads[x.id] += g.transpose(); });
}

template <typename Scalar>
Var relu(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out = t.value(x).cwiseMax(Scalar(0));
  return t.record(std::move(out), t.requires_grad(x),
                  [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                      const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    grads[x.id].array() +=
                        (t.value(x).array() > Scalar(0)).template cast<Scalar>() * g.array();
                  });
}

template <typename Scalar>
Var tanh_elem(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out = t.value(x).array().tanh().matrix();
  return t.record(std::move(out), t.requires_grad(x),
                  [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                      const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    const auto& y = t.value(self);
                    grads[x.id].array() += g.array() * (Scalar(1) - y.array().square());
                  });
}

template <typename Scalar>
Var sigm_elem(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out = t.value(x).unaryExpr([](Scalar v) { return detail::stable_sigmoid(v); });
  return t.record(std::move(out), t.requires_grad(x),
                  [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                      const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    const auto& y = t.value(self);
                    grads[x.id].array() += g.array() * y.array() * (Scalar(1) - y.array());
                  });
}

template <typename Scalar>
Var elem_mul(Tape<Scalar>& t, Var a, Var b) {
  detail::require_same_shape(t.value(a), t.value(b), "elem_mul");
  Mat<Scalar> out = t.value(a).cwiseProduct(t.value(b));
  const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
  return t.record(std::move(out), ga || gb,
                  [a, b, ga, gb]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                                 const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    if (ga) grads[a.id] += g.cwiseProduct(t.value(b));
                    if (gb) grads[b.id] += g.cwiseProduct(t.value(a));
                  });
}

// Row-wise softmax with max subtraction.
template <typename Scalar>
Mat<Scalar> softmax_rows_value(const Mat<Scalar>& x) {
  Mat<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Scalar>
Var softmax_rows(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out = softmax_rows_value(t.value(x));
  return t.record(std::move(out), t.requires_grad(x),
                  [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                      const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    const auto& y = t.value(self);
                    // dx = y * (g - <g, y>) per row
                    const auto dots = (g.cwiseProduct(y)).rowwise().sum();
                    grads[x.id].array() += y.array() * (g.colwise() - dots).array();
                  });
}

// n x m -> n x 1
template <typename Scalar>
Var row_sums(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out = t.value(x).rowwise().sum();
  return t.record(
      std::move(out), t.requires_grad(x),
      [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self, const Mat<Scalar>& g,
          std::vector<Mat<Scalar>>& grads) { grads[x.id].colwise() += g.col(0); });
}

template <typename Scalar>
Var sum(Tape<Scalar>& t, Var x) {
  Mat<Scalar> out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.record(
      std::move(out), t.requires_grad(x),
      [x]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self, const Mat<Scalar>& g,
          std::vector<Mat<Scalar>>& grads) { grads[x.id].array() += g(0, 0); });
}

template <typename Scalar>
Var mean(Tape<Scalar>& t, Var x) {
  const auto n = static_cast<Scalar>(t.value(x).size());
  if (n == Scalar(0)) throw ShapeError("mean: empty matrix");
  return scale(t, sum(t, x), Scalar(1) / n);
}

// Selects rows by index (repeats allowed); gradient scatters back.
template <typename Scalar>
Var gather_rows(Tape<Scalar>& t, Var x, std::vector<Eigen::Index> rows) {
  const auto& xv = t.value(x);
  Mat<Scalar> out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(xv));
    }
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  return t.record(
      std::move(out), t.requires_grad(x),
      [x, rows = std::move(rows)]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                                  const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
        for (std::size_t i = 0; i < rows.size(); ++i) {
          grads[x.id].row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        }
      });
}

// Inverted dropout. Eval mode (or p == 0) returns the input node itself.
template <typename Scalar>
Var dropout(Tape<Scalar>& t, Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const auto& xv = t.value(x);
  Mat<Scalar> mask(xv.rows(), xv.cols());
  const Scalar keep_scale = Scalar(1) / Scalar(1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(rng) < p ? Scalar(0) : keep_scale;
  }
  Mat<Scalar> out = xv.cwiseProduct(mask);
  return t.record(
      std::move(out), t.requires_grad(x),
      [x, mask = std::move(mask)]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                                  const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
        grads[x.id] += g.cwiseProduct(mask);
      });
}

// Cross-entropy of a 1 x M logit row against a class index, via log-sum-exp.
template <typename Scalar>
Var cross_entropy(Tape<Scalar>& t, Var logits, Eigen::Index label) {
  const auto& lv = t.value(logits);
  if (lv.rows() != 1) throw ShapeError("cross_entropy: expected 1xM logits, got " + shape_str(lv));
  if (label < 0 || label >= lv.cols()) {
    throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                        std::to_string(lv.cols()) + ")");
  }
  const Scalar mx = lv.maxCoeff();
  const Scalar lse = mx + std::log((lv.array() - mx).exp().sum());
  Mat<Scalar> out(1, 1);
  out(0, 0) = lse - lv(0, label);
  return t.record(std::move(out), t.requires_grad(logits),
                  [logits, label]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                                  const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
                    Mat<Scalar> p = softmax_rows_value(t.value(logits));
                    p(0, label) -= Scalar(1);
                    grads[logits.id] += g(0, 0) * p;
                  });
}

// Quadratically smoothed hinge on margins m = y * score:
//   0                          for m >= margin
//   (margin - m)^2 / (2 tau)   for margin - tau < m < margin
//   margin - m - tau / 2       otherwise
template <typename Scalar>
Scalar smooth_hinge_value(Scalar m, Scalar margin = Scalar(1), Scalar tau = Scalar(1)) {
  if (m >= margin) return Scalar(0);
  if (m > margin - tau) return (margin - m) * (margin - m) / (Scalar(2) * tau);
  return margin - m - tau / Scalar(2);
}

template <typename Scalar>
Scalar smooth_hinge_slope(Scalar m, Scalar margin = Scalar(1), Scalar tau = Scalar(1)) {
  if (m >= margin) return Scalar(0);
  if (m > margin - tau) return -(margin - m) / tau;
  return Scalar(-1);
}

template <typename Scalar>
Var smooth_hinge(Tape<Scalar>& t, Var margins, Scalar margin = Scalar(1), Scalar tau = Scalar(1)) {
  Mat<Scalar> out =
      t.value(margins).unaryExpr([=](Scalar m) { return smooth_hinge_value(m, margin, tau); });
  return t.record(
      std::move(out), t.requires_grad(margins),
      [margins, margin, tau]([[maybe_unused]] const Tape<Scalar>& t, [[maybe_unused]] Var self,
                             const Mat<Scalar>& g, std::vector<Mat<Scalar>>& grads) {
        grads[margins.id] += g.cwiseProduct(t.value(margins).unaryExpr(
            [=](Scalar m) { return smooth_hinge_slope(m, margin, tau); }));
      });
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace milforge::ad
