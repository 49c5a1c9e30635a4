#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "acmt/diff/tensor.hpp"
#include "acmt/error.hpp"

namespace acmt::diff {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Discrete choices made by piecewise primitives (relu on/off, abs sign, max argmax), in
/// evaluation order. Recording on one pass and replaying on another keeps a perturbed
/// evaluation on the same linear piece, which is what finite-difference checks need.
class BranchLog {
 public:
  void start_recording() {
    choices_.clear();
    replay_ = false;
  }
  void start_replay() {
    replay_ = true;
    cursor_ = 0;
  }
  bool replaying() const { return replay_; }
  std::size_t size() const { return choices_.size(); }

  std::uint32_t take(std::uint32_t computed) {
    if (!replay_) {
      choices_.push_back(computed);
      return computed;
    }
    require(cursor_ < choices_.size(), ErrorCategory::precondition, "branch replay ran past the recorded choices");
    return choices_[cursor_++];
  }

 private:
  std::vector<std::uint32_t> choices_;
  bool replay_ = false;
  std::size_t cursor_ = 0;
};

/// Records primitive operations in execution order (which is a topological order) and
/// replays them in reverse to accumulate gradients.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  void set_branch_log(BranchLog* log) { branches_ = log; }
  /// Passes `computed` through, or substitutes the recorded choice while replaying.
  std::uint32_t branch(std::uint32_t computed) { return branches_ ? branches_->take(computed) : computed; }

  Var constant(Tensor value) { return push(Node{std::move(value), nullptr, nullptr, false, {}, {}}); }

  Var variable(Tensor value) { return push(Node{std::move(value), nullptr, nullptr, grad_enabled_, {}, {}}); }

  /// Leaf bound to a parameter; backward() adds its gradient into param.grad.
  Var parameter(Parameter& param) {
    return push(Node{Tensor{}, &param.value, grad_enabled_ ? &param : nullptr, grad_enabled_, {}, {}});
  }

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (const auto& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    return push(Node{std::move(value), nullptr, nullptr, needs, {}, needs ? std::move(fn) : BackwardFn{}});
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-initialized on first touch.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !value(id).empty()) n.grad = Tensor(value(id).shape(), Storage(value(id).size(), 0.0));
    return n.grad;
  }

  const Tensor& grad(Var v) const {
    require(backward_done_, ErrorCategory::precondition, "gradients requested before backward()");
    return nodes_[v.id()].grad;
  }

  void backward(Var loss) {
    require(!backward_done_, ErrorCategory::precondition, "backward() already ran on this tape");
    const Tensor& lv = value(loss.id());
    require(lv.size() == 1, ErrorCategory::shape, "backward() needs a scalar loss, got " + lv.shape_string());
    backward_done_ = true;
    visits_ = 0;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        ++visits_;
        n.backward(*this, n.grad, n.external ? *n.external : n.value);
      }
      if (n.param) {
        auto& dst = n.param->grad.values();
        const auto& src = n.grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }
  /// Number of operation nodes replayed by the last backward().
  std::size_t backward_visits() const { return visits_; }
  std::size_t op_count() const {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += node.backward ? 1 : 0;
    return n;
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external;
    Parameter* param;
    bool requires_grad;
    Tensor grad;
    BackwardFn backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  BranchLog* branches_ = nullptr;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---------------------------------------------------------------------------
// Primitives. Each computes its forward value and registers the backward rule.

namespace detail {

inline void check(bool ok, const std::string& op, const Tensor& a, const Tensor& b) {
  require(ok, ErrorCategory::shape, op + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

inline bool wants(Tape& t, const Var& v) { return t.requires_grad(v.id()); }

}  // namespace detail

/// a[n x k] * b[k x m]
inline Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::check(av.cols() == bv.rows(), "matmul", av, bv);
  Tensor out(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (detail::wants(t, a)) t.grad_buffer(a.id()).mat().noalias() += g.mat() * t.value(b.id()).mat().transpose();
    if (detail::wants(t, b)) t.grad_buffer(b.id()).mat().noalias() += t.value(a.id()).mat().transpose() * g.mat();
  });
}

/// a[n x k] * b[m x k]^T
inline Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::check(av.cols() == bv.cols(), "matmul_nt", av, bv);
  Tensor out(av.rows(), bv.rows());
  out.mat().noalias() = av.mat() * bv.mat().transpose();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g, const Tensor&) {
    if (detail::wants(t, a)) t.grad_buffer(a.id()).mat().noalias() += g.mat() * t.value(b.id()).mat();
    if (detail::wants(t, b)) t.grad_buffer(b.id()).mat().noalias() += g.mat().transpose() * t.value(a.id()).mat();
  });
}

/// Shared-weight layer applied to every row: x[n x c] * w[c x d] + bias[1 x d].
inline Var pointwise_linear(Var x, Var w, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = bias.value();
  detail::check(xv.cols() == wv.rows(), "pointwise_linear", xv, wv);
  detail::check(bv.rows() == 1 && bv.cols() == wv.cols(), "pointwise_linear(bias)", wv, bv);
  Tensor out(xv.rows(), wv.cols());
  out.mat().noalias() = xv.mat() * wv.mat();
  out.mat().rowwise() += bv.mat().row(0);
  return x.tape().record(std::move(out), {x, w, bias}, [x, w, bias](Tape& t, const Tensor& g, const Tensor&) {
    if (detail::wants(t, x)) t.grad_buffer(x.id()).mat().noalias() += g.mat() * t.value(w.id()).mat().transpose();
    if (detail::wants(t, w)) t.grad_buffer(w.id()).mat().noalias() += t.value(x.id()).mat().transpose() * g.mat();
    if (detail::wants(t, bias)) t.grad_buffer(bias.id()).mat().row(0) += g.mat().colwise().sum();
  });
}

inline Var relu(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), xv.values());
  std::vector<std::uint8_t> on(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    on[i] = static_cast<std::uint8_t>(tape.branch(out[i] > 0.0 ? 1 : 0));
    if (!on[i]) out[i] = 0.0;
  }
  return tape.record(std::move(out), {x}, [x, on = std::move(on)](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i)
      if (on[i]) gx[i] += g[i];
  });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), xv.values());
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g, const Tensor& s) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

/// Column-wise max over contiguous row groups: group i spans rows [offsets[i], offsets[i+1]).
/// The first maximal row receives the gradient.
inline Var max_reduce(Var x, std::vector<std::size_t> offsets) {
  const Tensor& xv = x.value();
  require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == xv.rows(), ErrorCategory::shape,
          "max_reduce: group offsets must start at 0 and end at the row count " + xv.shape_string());
  const std::size_t groups = offsets.size() - 1;
  const std::size_t c = xv.cols();
  Tensor out(groups, c);
  std::vector<std::size_t> argmax(groups * c);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    require(offsets[gi + 1] > offsets[gi], ErrorCategory::shape, "max_reduce: empty group");
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = offsets[gi];
      double bv = xv(best, j);
      for (std::size_t r = offsets[gi] + 1; r < offsets[gi + 1]; ++r)
        if (xv(r, j) > bv) {
          bv = xv(r, j);
          best = r;
        }
      best = offsets[gi] + x.tape().branch(static_cast<std::uint32_t>(best - offsets[gi]));
      out(gi, j) = xv(best, j);
      argmax[gi * c + j] = best;
    }
  }
  return x.tape().record(std::move(out), {x}, [x, argmax = std::move(argmax), c](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t k = 0; k < argmax.size(); ++k) gx(argmax[k], k % c) += g[k];
  });
}

/// Equal-size groups of `group_size` consecutive rows.
inline Var max_reduce(Var x, std::size_t group_size) {
  require(group_size > 0 && x.rows() % group_size == 0, ErrorCategory::shape,
          "max_reduce: row count not divisible by group size");
  std::vector<std::size_t> offsets;
  for (std::size_t r = 0; r <= x.rows(); r += group_size) offsets.push_back(r);
  return max_reduce(x, std::move(offsets));
}

/// Column concatenation [a | b].
inline Var concat(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::check(av.rows() == bv.rows(), "concat", av, bv);
  const std::size_t ca = av.cols(), cb = bv.cols();
  Tensor out(av.rows(), ca + cb);
  out.mat().leftCols(static_cast<Eigen::Index>(ca)) = av.mat();
  out.mat().rightCols(static_cast<Eigen::Index>(cb)) = bv.mat();
  return a.tape().record(std::move(out), {a, b}, [a, b, ca, cb](Tape& t, const Tensor& g, const Tensor&) {
    if (detail::wants(t, a)) t.grad_buffer(a.id()).mat() += g.mat().leftCols(static_cast<Eigen::Index>(ca));
    if (detail::wants(t, b)) t.grad_buffer(b.id()).mat() += g.mat().rightCols(static_cast<Eigen::Index>(cb));
  });
}

/// alpha * x + beta * y
inline Var scale_add(double alpha, Var x, double beta, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  detail::check(xv.same_shape(yv), "scale_add", xv, yv);
  Tensor out(xv.shape(), xv.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * xv[i] + beta * yv[i];
  return x.tape().record(std::move(out), {x, y}, [x, y, alpha, beta](Tape& t, const Tensor& g, const Tensor&) {
    if (detail::wants(t, x)) {
      Tensor& gx = t.grad_buffer(x.id());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
    }
    if (detail::wants(t, y)) {
      Tensor& gy = t.grad_buffer(y.id());
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += beta * g[i];
    }
  });
}

inline Var scale(Var x, double alpha) { return scale_add(alpha, x, 0.0, x); }

/// Elementwise a * x + c.
inline Var affine(Var x, double a, double c) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), xv.values());
  for (auto& v : out.values()) v = a * v + c;
  return x.tape().record(std::move(out), {x}, [x, a](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
  });
}

/// Elementwise product.
inline Var mul(Var x, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  detail::check(xv.same_shape(yv), "mul", xv, yv);
  Tensor out(xv.shape(), xv.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= yv[i];
  return x.tape().record(std::move(out), {x, y}, [x, y](Tape& t, const Tensor& g, const Tensor&) {
    if (detail::wants(t, x)) {
      const Tensor& yv = t.value(y.id());
      Tensor& gx = t.grad_buffer(x.id());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
    }
    if (detail::wants(t, y)) {
      const Tensor& xv = t.value(x.id());
      Tensor& gy = t.grad_buffer(y.id());
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * xv[i];
    }
  });
}

/// out row r = x row index[r]
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  Tensor out(index.size(), c);
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < xv.rows(), ErrorCategory::shape, "gather_rows: index out of range for " + xv.shape_string());
    std::copy_n(xv.data() + index[r] * c, c, out.data() + r * c);
  }
  return x.tape().record(std::move(out), {x}, [x, index = std::move(index), c](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) gx(index[r], j) += g(r, j);
  });
}

/// out row i = sum_t weight[i*k+t] * x row index[i*k+t]  (fixed sparse mixing, e.g. IDW)
inline Var weighted_rows(Var x, std::vector<std::size_t> index, std::vector<double> weight, std::size_t k) {
  const Tensor& xv = x.value();
  require(k > 0 && index.size() == weight.size() && index.size() % k == 0, ErrorCategory::shape,
          "weighted_rows: index/weight lists must be M x k");
  const std::size_t c = xv.cols();
  const std::size_t m = index.size() / k;
  Tensor out(m, c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t src = index[i * k + s];
      require(src < xv.rows(), ErrorCategory::shape, "weighted_rows: index out of range for " + xv.shape_string());
      const double w = weight[i * k + s];
      for (std::size_t j = 0; j < c; ++j) out(i, j) += w * xv(src, j);
    }
  return x.tape().record(std::move(out), {x},
                         [x, index = std::move(index), weight = std::move(weight), k, c, m](Tape& t, const Tensor& g, const Tensor&) {
                           Tensor& gx = t.grad_buffer(x.id());
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t s = 0; s < k; ++s) {
                               const double w = weight[i * k + s];
                               const std::size_t src = index[i * k + s];
                               for (std::size_t j = 0; j < c; ++j) gx(src, j) += w * g(i, j);
                             }
                         });
}

/// Sum of all elements as a 1 x 1 tensor.
inline Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Euclidean norm of every row, n x 1. The gradient at a zero row is taken as zero.
inline Var row_norm(Var x) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  Tensor out(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += xv(r, j) * xv(r, j);
    out(r, 0) = std::sqrt(s);
  }
  return x.tape().record(std::move(out), {x}, [x, c](Tape& t, const Tensor& g, const Tensor& nv) {
    const Tensor& xv = t.value(x.id());
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t r = 0; r < nv.rows(); ++r) {
      if (nv(r, 0) == 0.0) continue;
      const double s = g(r, 0) / nv(r, 0);
      for (std::size_t j = 0; j < c; ++j) gx(r, j) += s * xv(r, j);
    }
  });
}

/// Elementwise |x|, subgradient 0 at 0.
inline Var abs(Var x) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape(), xv.values());
  // sign stored as 0 (zero), 1 (+), 2 (-)
  std::vector<std::int8_t> sign(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto b = x.tape().branch(out[i] > 0.0 ? 1 : (out[i] < 0.0 ? 2 : 0));
    sign[i] = static_cast<std::int8_t>(b == 1 ? 1 : (b == 2 ? -1 : 0));
    out[i] = sign[i] * out[i];
  }
  return x.tape().record(std::move(out), {x}, [x, sign = std::move(sign)](Tape& t, const Tensor& g, const Tensor&) {
    Tensor& gx = t.grad_buffer(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sign[i] * g[i];
  });
}

/// Sum of squares of all elements, 1 x 1.
inline Var sum_squares(Var x) { return sum(mul(x, x)); }

}  // namespace acmt::diff
