#ifndef APDA_CRG_HPP
#define APDA_CRG_HPP

// Class relational graph: per-batch label matrix, normalized adjacency and
// graph-convolutional feature propagation.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "apda/autodiff.hpp"

namespace apda {

enum class DomainTag { Source, Target };

/// How target rows of the label matrix are formed: the classifier's softmax
/// row, or the one-hot of its argmax (ablation).
enum class TargetLabelMode { Soft, Hard };

struct LabelMatrix {
  Tensor rows;                    // n x N_c, each row a probability vector
  std::vector<DomainTag> domain;  // per row
};

struct AdjacencyMatrix {
  Tensor a_tilde;  // Y Y^T + I
  Tensor a_hat;    // D^-1/2 A_tilde D^-1/2
};

enum class Activation { Relu, Identity };

/// Graph layers. Weights are tape variables; layer l maps d_l -> d_{l+1}.
struct GraphStack {
  std::vector<Var> weights;
  std::vector<Activation> activations;

  /// Relu on every layer except the last, which is linear.
  static std::vector<Activation> default_activations(std::size_t layers) {
    std::vector<Activation> acts(layers, Activation::Relu);
    if (!acts.empty()) acts.back() = Activation::Identity;
    return acts;
  }
};

/// Source rows (one-hot of the true label) first, then target rows.
/// Target rows are copied as values; no gradient flows through graph edges.
inline LabelMatrix build_label_matrix(std::span<const int> source_labels, const Tensor& target_probs,
                                      std::size_t num_classes, TargetLabelMode mode = TargetLabelMode::Soft) {
  if (target_probs.cols() != num_classes) {
    throw DimensionError("build_label_matrix: target probabilities have " + std::to_string(target_probs.cols()) +
                         " columns, expected " + std::to_string(num_classes));
  }
  const std::size_t ns = source_labels.size();
  const std::size_t nt = target_probs.rows();
  LabelMatrix lm{Tensor::matrix(ns + nt, num_classes), {}};
  lm.domain.reserve(ns + nt);
  for (std::size_t i = 0; i < ns; ++i) {
    const int y = source_labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ValidationError("build_label_matrix: source label " + std::to_string(y) + " out of range");
    }
    lm.rows(i, static_cast<std::size_t>(y)) = 1.0;
    lm.domain.push_back(DomainTag::Source);
  }
  for (std::size_t i = 0; i < nt; ++i) {
    if (mode == TargetLabelMode::Hard) {
      lm.rows(ns + i, argmax_row(target_probs, i)) = 1.0;
    } else {
      for (std::size_t c = 0; c < num_classes; ++c) lm.rows(ns + i, c) = target_probs(i, c);
    }
    lm.domain.push_back(DomainTag::Target);
  }
  return lm;
}

inline AdjacencyMatrix build_adjacency(const LabelMatrix& labels) {
  const Tensor& y = labels.rows;
  const std::size_t n = y.rows();
  AdjacencyMatrix adj{matmul_nt(y, y), Tensor::matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) adj.a_tilde(i, i) += 1.0;

  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += adj.a_tilde(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);  // d >= 1 from the self loop
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) adj.a_hat(i, j) = adj.a_tilde(i, j) * (inv_sqrt_deg[i] * inv_sqrt_deg[j]);
  return adj;
}

/// H^{l+1} = act_l(A_hat H^l W^l).
inline Var propagate(Var h0, const Tensor& a_hat, const GraphStack& stack) {
  Tape& t = *h0.tape;
  if (stack.weights.empty()) throw ValidationError("propagate: graph stack needs at least one layer");
  if (stack.activations.size() != stack.weights.size()) {
    throw ValidationError("propagate: one activation per graph layer required");
  }
  const std::size_t n = t.value(h0).rows();
  if (a_hat.rows() != n || a_hat.cols() != n) {
    throw DimensionError("propagate: adjacency " + shape_string(a_hat.shape()) + " does not match " +
                         std::to_string(n) + " nodes");
  }
  const Var adj = t.constant(a_hat);
  Var h = h0;
  for (std::size_t l = 0; l < stack.weights.size(); ++l) {
    h = matmul(adj, matmul(h, stack.weights[l]));
    if (stack.activations[l] == Activation::Relu) h = relu(h);
  }
  return h;
}

}  // namespace apda

#endif  // APDA_CRG_HPP
