#ifndef APDA_AUTODIFF_HPP
#define APDA_AUTODIFF_HPP

// Minimal reverse-mode differentiation over dense 2-D tensors.
//
// A Tape owns every value produced during one forward pass. Var is a cheap
// handle (tape pointer + node id). Nodes are appended in creation order, so the
// tape is topologically sorted by construction and backward() is a single
// reverse sweep.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apda/tensor.hpp"

namespace apda {

/// Floor applied to probabilities before any log.
inline constexpr double kProbEpsilon = 1e-7;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  Var record(Tensor value, bool requires_grad, BackwardFn fn) {
    return push(std::move(value), requires_grad, requires_grad ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() loss w.r.t. v; zeros if v was unreachable.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (!g.same_shape(n.value)) {
      throw ContractViolation("gradient shape " + shape_string(g.shape()) + " does not match value shape " +
                              shape_string(n.value.shape()));
    }
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto& dst = n.grad.data();
    const auto& src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  // Accumulates through a callback that writes into the parent's buffer,
  // avoiding a temporary for ops whose local gradient is cheap to form in place.
  template <typename Fill>
  void accumulate_with(std::size_t id, Fill&& fill) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    fill(n.grad);
  }

  void backward(Var loss) {
    check(loss);
    if (node(loss).value.size() != 1) {
      throw ContractViolation("backward() requires a scalar loss, got " + shape_string(node(loss).value.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    Node& root = nodes_[loss.id];
    if (!root.requires_grad) return;
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  void check(Var v) const {
    if (v.tape != this) throw ContractViolation("Var belongs to a different tape");
    if (v.id >= nodes_.size()) throw ContractViolation("Var id out of range");
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  const Node& node(Var v) const {
    check(v);
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractViolation("operands live on different tapes");
  return *a.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = matmul_values(t.value(a), t.value(b));
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), rg, [a, b](Tape& tape, const Tensor& g) {
    if (tape.requires_grad(a)) tape.accumulate(a.id, matmul_nt(g, tape.value(b)));
    if (tape.requires_grad(b)) tape.accumulate(b.id, matmul_tn(tape.value(a), g));
  });
}

// ---------------------------------------------------------------------------
// Elementwise

enum class ElementwiseKind { Add, Subtract, Multiply, Scale, Relu, Sigmoid, Log, Exp };

inline bool is_binary(ElementwiseKind k) {
  return k == ElementwiseKind::Add || k == ElementwiseKind::Subtract || k == ElementwiseKind::Multiply;
}

/// Elementwise op. `constant` is the factor for Scale and the probability floor
/// for Log; a Log floor of std::nullopt disables clamping and rejects x <= 0.
inline Var elementwise(ElementwiseKind kind, Var x, std::optional<Var> y = std::nullopt,
                       std::optional<double> constant = std::nullopt) {
  Tape& t = *x.tape;
  t.check(x);
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape(), 0.0);
  auto& o = out.data();
  const auto& xs = xv.data();

  if (is_binary(kind)) {
    if (!y) throw ContractViolation("binary elementwise op needs two operands");
    detail::same_tape(x, *y);
    const Tensor& yv = t.value(*y);
    detail::require_same_shape(xv, yv, "elementwise");
    const auto& ys = yv.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
      switch (kind) {
        case ElementwiseKind::Add: o[i] = xs[i] + ys[i]; break;
        case ElementwiseKind::Subtract: o[i] = xs[i] - ys[i]; break;
        default: o[i] = xs[i] * ys[i]; break;
      }
    }
    const Var yy = *y;
    const bool rg = t.requires_grad(x) || t.requires_grad(yy);
    return t.record(std::move(out), rg, [kind, x, yy](Tape& tape, const Tensor& g) {
      if (kind == ElementwiseKind::Multiply) {
        if (tape.requires_grad(x)) {
          tape.accumulate_with(x.id, [&](Tensor& dst) {
            const auto& yv = tape.value(yy).data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * yv[i];
          });
        }
        if (tape.requires_grad(yy)) {
          tape.accumulate_with(yy.id, [&](Tensor& dst) {
            const auto& xv = tape.value(x).data();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * xv[i];
          });
        }
        return;
      }
      tape.accumulate(x.id, g);
      if (kind == ElementwiseKind::Add) {
        tape.accumulate(yy.id, g);
      } else {
        tape.accumulate_with(yy.id, [&](Tensor& dst) {
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= g[i];
        });
      }
    });
  }

  if (y) throw ContractViolation("unary elementwise op given two operands");

  switch (kind) {
    case ElementwiseKind::Scale: {
      const double c = constant.value_or(1.0);
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * xs[i];
      return t.record(std::move(out), t.requires_grad(x), [x, c](Tape& tape, const Tensor& g) {
        tape.accumulate_with(x.id, [&](Tensor& dst) {
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * g[i];
        });
      });
    }
    case ElementwiseKind::Relu: {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = xs[i] > 0.0 ? xs[i] : 0.0;
      return t.record(std::move(out), t.requires_grad(x), [x](Tape& tape, const Tensor& g) {
        tape.accumulate_with(x.id, [&](Tensor& dst) {
          const auto& xv = tape.value(x).data();
          for (std::size_t i = 0; i < dst.size(); ++i)
            if (xv[i] > 0.0) dst[i] += g[i];
        });
      });
    }
    case ElementwiseKind::Sigmoid: {
      for (std::size_t i = 0; i < o.size(); ++i) {
        const double v = xs[i];
        // Split by sign so exp never overflows.
        if (v >= 0.0) {
          o[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
          const double e = std::exp(v);
          o[i] = e / (1.0 + e);
        }
      }
      const std::size_t self = t.size();
      return t.record(std::move(out), t.requires_grad(x), [x, self](Tape& tape, const Tensor& g) {
        const auto& s = tape.value(Var{&tape, self}).data();
        tape.accumulate_with(x.id, [&](Tensor& dst) {
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * s[i] * (1.0 - s[i]);
        });
      });
    }
    case ElementwiseKind::Log: {
      const std::optional<double> floor = constant;
      for (std::size_t i = 0; i < o.size(); ++i) {
        if (floor) {
          o[i] = std::log(std::max(xs[i], *floor));
        } else {
          if (!(xs[i] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(xs[i]));
          o[i] = std::log(xs[i]);
        }
      }
      return t.record(std::move(out), t.requires_grad(x), [x, floor](Tape& tape, const Tensor& g) {
        tape.accumulate_with(x.id, [&](Tensor& dst) {
          const auto& xv = tape.value(x).data();
          for (std::size_t i = 0; i < dst.size(); ++i) {
            if (floor && xv[i] <= *floor) continue;  // clamped region is flat
            dst[i] += g[i] / xv[i];
          }
        });
      });
    }
    case ElementwiseKind::Exp: {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(xs[i]);
      const std::size_t self = t.size();
      return t.record(std::move(out), t.requires_grad(x), [x, self](Tape& tape, const Tensor& g) {
        const auto& e = tape.value(Var{&tape, self}).data();
        tape.accumulate_with(x.id, [&](Tensor& dst) {
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * e[i];
        });
      });
    }
    default: throw ContractViolation("unhandled elementwise kind");
  }
}

inline Var add(Var a, Var b) { return elementwise(ElementwiseKind::Add, a, b); }
inline Var sub(Var a, Var b) { return elementwise(ElementwiseKind::Subtract, a, b); }
inline Var mul(Var a, Var b) { return elementwise(ElementwiseKind::Multiply, a, b); }
inline Var scale(Var a, double c) { return elementwise(ElementwiseKind::Scale, a, std::nullopt, c); }
inline Var relu(Var a) { return elementwise(ElementwiseKind::Relu, a); }
inline Var sigmoid(Var a) { return elementwise(ElementwiseKind::Sigmoid, a); }
inline Var exp(Var a) { return elementwise(ElementwiseKind::Exp, a); }
inline Var log(Var a, std::optional<double> floor = kProbEpsilon) {
  return elementwise(ElementwiseKind::Log, a, std::nullopt, floor);
}

inline Var add_constant(Var a, const Tensor& c) { return add(a, a.tape->constant(c)); }

/// x[n x k] + row[1 x k] broadcast over rows.
inline Var add_row(Var x, Var row) {
  Tape& t = detail::same_tape(x, row);
  const Tensor& xv = t.value(x);
  const Tensor& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw DimensionError("add_row: bias " + shape_string(rv.shape()) + " incompatible with " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* o = out.row_ptr(i);
    for (std::size_t j = 0; j < out.cols(); ++j) o[j] += rv[j];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(row);
  return t.record(std::move(out), rg, [x, row](Tape& tape, const Tensor& g) {
    tape.accumulate(x.id, g);
    tape.accumulate_with(row.id, [&](Tensor& dst) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += g(i, j);
    });
  });
}

/// Elementwise min(x, ceiling); gradient is zero where the ceiling is active.
inline Var clamp_max(Var x, double ceiling) {
  Tape& t = *x.tape;
  Tensor out = t.value(x);
  for (auto& v : out.data()) v = std::min(v, ceiling);
  return t.record(std::move(out), t.requires_grad(x), [x, ceiling](Tape& tape, const Tensor& g) {
    tape.accumulate_with(x.id, [&](Tensor& dst) {
      const auto& xv = tape.value(x).data();
      for (std::size_t i = 0; i < dst.size(); ++i)
        if (xv[i] < ceiling) dst[i] += g[i];
    });
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out = Tensor::matrix(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double* in = xv.row_ptr(i);
    double* o = out.row_ptr(i);
    const double m = *std::max_element(in, in + xv.cols());
    double z = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) z += (o[j] = std::exp(in[j] - m));
    for (std::size_t j = 0; j < xv.cols(); ++j) o[j] /= z;
  }
  const std::size_t self = t.size();
  return t.record(std::move(out), t.requires_grad(x), [x, self](Tape& tape, const Tensor& g) {
    const Tensor& s = tape.value(Var{&tape, self});
    tape.accumulate_with(x.id, [&](Tensor& dst) {
      for (std::size_t i = 0; i < s.rows(); ++i) {
        const double* si = s.row_ptr(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < s.cols(); ++j) dot += g(i, j) * si[j];
        for (std::size_t j = 0; j < s.cols(); ++j) dst(i, j) += si[j] * (g(i, j) - dot);
      }
    });
  });
}

/// Identity forward; backward multiplies the upstream gradient by -lambda.
inline Var grad_reverse(Var x, double lambda) {
  if (lambda < 0.0) throw ValidationError("grad_reverse requires lambda >= 0");
  Tape& t = *x.tape;
  return t.record(t.value(x), t.requires_grad(x), [x, lambda](Tape& tape, const Tensor& g) {
    tape.accumulate_with(x.id, [&](Tensor& dst) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= lambda * g[i];
    });
  });
}

inline Var stop_gradient(Var x) { return x.tape->constant(x.tape->value(x)); }

inline Var sum(Var x) {
  Tape& t = *x.tape;
  const auto& xs = t.value(x).data();
  double s = 0.0;
  for (double v : xs) s += v;
  return t.record(Tensor::scalar(s), t.requires_grad(x), [x](Tape& tape, const Tensor& g) {
    const double gv = g[0];
    tape.accumulate_with(x.id, [&](Tensor& dst) {
      for (auto& v : dst.data()) v += gv;
    });
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.tape->value(x).size())); }

/// Row sums: [n x k] -> [n x 1].
inline Var sum_cols(Var x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out = Tensor::matrix(xv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double* r = xv.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) s += r[j];
    out[i] = s;
  }
  return t.record(std::move(out), t.requires_grad(x), [x](Tape& tape, const Tensor& g) {
    tape.accumulate_with(x.id, [&](Tensor& dst) {
      for (std::size_t i = 0; i < dst.rows(); ++i)
        for (std::size_t j = 0; j < dst.cols(); ++j) dst(i, j) += g[i];
    });
  });
}

/// Each row divided by its Euclidean norm (rows with norm below `floor` are
/// divided by `floor` instead).
inline Var l2_normalize_rows(Var x, double floor = 1e-12) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  std::vector<double> norms(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    const double* r = xv.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) s += r[j] * r[j];
    norms[i] = std::max(std::sqrt(s), floor);
    double* o = out.row_ptr(i);
    for (std::size_t j = 0; j < xv.cols(); ++j) o[j] /= norms[i];
  }
  const std::size_t self = t.size();
  return t.record(std::move(out), t.requires_grad(x),
                  [x, self, floor, norms = std::move(norms)](Tape& tape, const Tensor& g) {
                    const Tensor& y = tape.value(Var{&tape, self});
                    tape.accumulate_with(x.id, [&](Tensor& dst) {
                      for (std::size_t i = 0; i < y.rows(); ++i) {
                        const double inv = 1.0 / norms[i];
                        if (norms[i] <= floor) {
                          for (std::size_t j = 0; j < y.cols(); ++j) dst(i, j) += g(i, j) * inv;
                          continue;
                        }
                        double dot = 0.0;
                        for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                        for (std::size_t j = 0; j < y.cols(); ++j) dst(i, j) += inv * (g(i, j) - dot * y(i, j));
                      }
                    });
                  });
}

inline Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& t = *x.tape;
  Tensor out = t.value(x).rows_slice(begin, end);
  return t.record(std::move(out), t.requires_grad(x), [x, begin](Tape& tape, const Tensor& g) {
    tape.accumulate_with(x.id, [&](Tensor& dst) {
      const std::size_t c = dst.cols();
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) dst(begin + i, j) += g(i, j);
    });
  });
}

// ---------------------------------------------------------------------------
// Losses. Weights are constants: no gradient flows into them.

/// (1/n) * sum_i w_i * -log(max(probs[i, y_i], eps)), with y given one-hot.
inline Var weighted_cross_entropy(Var probs, const Tensor& targets, std::span<const double> weights) {
  Tape& t = *probs.tape;
  const Tensor& p = t.value(probs);
  detail::require_same_shape(p, targets, "weighted_cross_entropy");
  if (weights.size() != p.rows()) throw DimensionError("weighted_cross_entropy: weight count differs from rows");
  const std::size_t n = p.rows(), c = p.cols();
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double y = targets(i, j);
      if (y != 0.0) row -= y * std::log(std::max(p(i, j), kProbEpsilon));
    }
    total += w[i] * row;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return t.record(Tensor::scalar(total * inv_n), t.requires_grad(probs),
                  [probs, targets, w = std::move(w), inv_n](Tape& tape, const Tensor& g) {
                    const Tensor& pv = tape.value(probs);
                    tape.accumulate_with(probs.id, [&](Tensor& dst) {
                      for (std::size_t i = 0; i < pv.rows(); ++i) {
                        if (w[i] == 0.0) continue;
                        for (std::size_t j = 0; j < pv.cols(); ++j) {
                          const double y = targets(i, j);
                          if (y == 0.0 || pv(i, j) <= kProbEpsilon) continue;
                          dst(i, j) -= g[0] * inv_n * w[i] * y / pv(i, j);
                        }
                      }
                    });
                  });
}

/// (1/n) * sum_i w_i * (-l_i log p_i - (1 - l_i) log(1 - p_i)), p clamped to [eps, 1 - eps].
inline Var weighted_binary_cross_entropy(Var probs, std::span<const double> labels, std::span<const double> weights) {
  Tape& t = *probs.tape;
  const Tensor& p = t.value(probs);
  const std::size_t n = p.size();
  if (labels.size() != n || weights.size() != n) {
    throw DimensionError("weighted_binary_cross_entropy: label/weight count differs from probabilities");
  }
  std::vector<double> l(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pi = p[i];
    total += w[i] * (-l[i] * std::log(std::max(pi, kProbEpsilon)) -
                     (1.0 - l[i]) * std::log(std::max(1.0 - pi, kProbEpsilon)));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return t.record(Tensor::scalar(total * inv_n), t.requires_grad(probs),
                  [probs, l = std::move(l), w = std::move(w), inv_n](Tape& tape, const Tensor& g) {
                    const Tensor& pv = tape.value(probs);
                    tape.accumulate_with(probs.id, [&](Tensor& dst) {
                      for (std::size_t i = 0; i < pv.size(); ++i) {
                        const double pi = pv[i];
                        double d = 0.0;
                        if (pi > kProbEpsilon) d -= l[i] / pi;
                        if (1.0 - pi > kProbEpsilon) d += (1.0 - l[i]) / (1.0 - pi);
                        dst[i] += g[0] * inv_n * w[i] * d;
                      }
                    });
                  });
}

inline Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor t = Tensor::matrix(labels.size(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) +
                            ")");
    }
    t(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

}  // namespace apda

#endif  // APDA_AUTODIFF_HPP
