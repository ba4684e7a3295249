#ifndef APDA_OBJECTIVES_HPP
#define APDA_OBJECTIVES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "apda/autodiff.hpp"

namespace apda {

inline constexpr double kCommonnessEpsilon = 1e-8;

/// -(1 / log N) * sum p log p, with 0 log 0 = 0. Zero for one-hot rows, one for uniform rows.
inline double normalized_entropy(std::span<const double> probs) {
  const std::size_t n = probs.size();
  if (n < 2) return 0.0;
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return std::clamp(h / std::log(static_cast<double>(n)), 0.0, 1.0);
}

struct WeightVector {
  std::vector<double> w;    // normalized to [0, 1]
  std::vector<double> raw;  // entropy(C') - D'
};

/// Sample-level commonness of source rows: E(C'(g)) - D'(g), min-max
/// normalized over the batch. A degenerate batch (all scores equal) maps to ones.
inline WeightVector sample_commonness(const Tensor& probs_aux, const Tensor& prob_daux) {
  const std::size_t n = probs_aux.rows();
  if (n == 0) throw ValidationError("sample_commonness: empty batch");
  if (prob_daux.size() != n) throw DimensionError("sample_commonness: C' and D' row counts differ");
  WeightVector out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.raw[i] = normalized_entropy(std::span<const double>(probs_aux.row_ptr(i), probs_aux.cols())) - prob_daux[i];
  }
  const auto [lo, hi] = std::minmax_element(out.raw.begin(), out.raw.end());
  const double range = *hi - *lo;
  if (range <= kCommonnessEpsilon) {
    std::fill(out.w.begin(), out.w.end(), 1.0);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out.w[i] = (out.raw[i] - *lo) / (range + kCommonnessEpsilon);
  return out;
}

inline Var weighted_classifier_loss(Var probs_source, std::span<const int> labels, std::span<const double> w) {
  const Tensor targets = one_hot(labels, probs_source.tape->value(probs_source).cols());
  return weighted_cross_entropy(probs_source, targets, w);
}

/// mean_source(w * -log D) + mean_target(-log(1 - D)).
inline Var weighted_domain_loss(Var prob_d_source, std::span<const double> w, Var prob_d_target) {
  const std::size_t ns = prob_d_source.tape->value(prob_d_source).size();
  const std::size_t nt = prob_d_target.tape->value(prob_d_target).size();
  if (ns == 0 || nt == 0) throw ValidationError("weighted_domain_loss: both domains must be present");
  const std::vector<double> ones_s(ns, 1.0), zeros_t(nt, 0.0), ones_t(nt, 1.0);
  return add(weighted_binary_cross_entropy(prob_d_source, ones_s, w),
             weighted_binary_cross_entropy(prob_d_target, zeros_t, ones_t));
}

// ---------------------------------------------------------------------------
// Class-level state

/// Centroid update expressed as R_new = coef * H + offset for each domain, where
/// H is the batch feature matrix (source rows first). Rows of absent classes
/// carry zero coefficients and the previous centroid as offset.
struct CentroidPlan {
  Tensor source_coef;    // N_c x n
  Tensor source_offset;  // N_c x d
  Tensor target_coef;
  Tensor target_offset;
  std::vector<bool> source_present;
  std::vector<bool> target_present;
};

/// Classes picked for attraction (top) and repulsion (bottom); empty when inactive.
struct CgSelection {
  std::vector<std::size_t> top;
  std::vector<std::size_t> bottom;
  std::size_t k = 0;

  bool active() const { return k > 0 && top.size() == k && bottom.size() == k; }
};

inline std::size_t default_top_k(std::size_t num_classes) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(num_classes))));
}

/// EMA-smoothed class commonness and class centroids in graph-feature space.
///
/// The first observation of a class (per domain) initializes the stored value;
/// later observations blend as alpha * batch + (1 - alpha) * stored.
class CommonnessState {
 public:
  CommonnessState() = default;

  CommonnessState(std::size_t num_classes, std::size_t feature_dim, double alpha, std::size_t top_k,
                  std::optional<double> margin_clamp = std::nullopt)
      : class_commonness_(num_classes, 0.0),
        commonness_seen_(num_classes, false),
        centroid_source_(Tensor::matrix(num_classes, feature_dim)),
        centroid_target_(Tensor::matrix(num_classes, feature_dim)),
        seen_source_(num_classes, false),
        seen_target_(num_classes, false),
        alpha_(alpha),
        top_k_(top_k),
        margin_clamp_(margin_clamp) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("EMA alpha must lie in [0, 1]");
    if (top_k < 1 || top_k > num_classes / 2) {
      throw ValidationError("top_k must lie in [1, floor(N_c / 2)], got " + std::to_string(top_k));
    }
  }

  std::size_t num_classes() const { return class_commonness_.size(); }
  std::size_t feature_dim() const { return centroid_source_.cols(); }
  double alpha() const { return alpha_; }
  std::size_t top_k() const { return top_k_; }
  std::optional<double> margin_clamp() const { return margin_clamp_; }

  const std::vector<double>& class_commonness() const { return class_commonness_; }
  const std::vector<bool>& commonness_seen() const { return commonness_seen_; }
  const Tensor& centroid_source() const { return centroid_source_; }
  const Tensor& centroid_target() const { return centroid_target_; }
  const std::vector<bool>& seen_source() const { return seen_source_; }
  const std::vector<bool>& seen_target() const { return seen_target_; }

  // Direct setters for snapshots and constructed test states.
  void set_class_commonness(std::size_t c, double v) {
    class_commonness_.at(c) = v;
    commonness_seen_.at(c) = true;
  }
  void set_centroids(std::size_t c, std::span<const double> source, std::span<const double> target) {
    std::copy(source.begin(), source.end(), centroid_source_.row_ptr(c));
    std::copy(target.begin(), target.end(), centroid_target_.row_ptr(c));
    seen_source_.at(c) = true;
    seen_target_.at(c) = true;
  }
  void restore(std::vector<double> commonness, std::vector<bool> commonness_seen, Tensor source, Tensor target,
               std::vector<bool> seen_source, std::vector<bool> seen_target) {
    class_commonness_ = std::move(commonness);
    commonness_seen_ = std::move(commonness_seen);
    centroid_source_ = std::move(source);
    centroid_target_ = std::move(target);
    seen_source_ = std::move(seen_source);
    seen_target_ = std::move(seen_target);
  }

  void update_class_commonness(std::span<const double> w, std::span<const int> labels) {
    if (w.size() != labels.size()) throw DimensionError("update_class_commonness: weights and labels differ in length");
    const std::size_t nc = num_classes();
    std::vector<double> sum(nc, 0.0);
    std::vector<std::size_t> count(nc, 0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto c = checked_class(labels[i]);
      sum[c] += w[i];
      ++count[c];
    }
    for (std::size_t c = 0; c < nc; ++c) {
      if (!count[c]) continue;
      const double batch_mean = sum[c] / static_cast<double>(count[c]);
      class_commonness_[c] =
          commonness_seen_[c] ? alpha_ * batch_mean + (1.0 - alpha_) * class_commonness_[c] : batch_mean;
      commonness_seen_[c] = true;
    }
  }

  CentroidPlan centroid_plan(std::span<const int> source_labels, std::span<const int> target_pseudo_labels) const {
    const std::size_t nc = num_classes(), d = feature_dim();
    const std::size_t ns = source_labels.size(), n = ns + target_pseudo_labels.size();
    CentroidPlan plan{Tensor::matrix(nc, n), centroid_source_, Tensor::matrix(nc, n), centroid_target_,
                      std::vector<bool>(nc, false), std::vector<bool>(nc, false)};
    const auto fill = [&](std::span<const int> labels, std::size_t row_offset, const std::vector<bool>& seen,
                          Tensor& coef, Tensor& offset, std::vector<bool>& present) {
      std::vector<std::size_t> count(nc, 0);
      for (int y : labels) ++count[checked_class(y)];
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(labels[i]);
        const double a = seen[c] ? alpha_ : 1.0;
        coef(c, row_offset + i) = a / static_cast<double>(count[c]);
      }
      for (std::size_t c = 0; c < nc; ++c) {
        if (!count[c]) continue;
        present[c] = true;
        const double keep = seen[c] ? 1.0 - alpha_ : 0.0;
        for (std::size_t j = 0; j < d; ++j) offset(c, j) *= keep;
      }
    };
    fill(source_labels, 0, seen_source_, plan.source_coef, plan.source_offset, plan.source_present);
    fill(target_pseudo_labels, ns, seen_target_, plan.target_coef, plan.target_offset, plan.target_present);
    return plan;
  }

  /// feat_g rows: source samples first, then target samples.
  void update_centroids(const Tensor& feat_g, std::span<const int> source_labels,
                        std::span<const int> target_pseudo_labels) {
    apply_plan(centroid_plan(source_labels, target_pseudo_labels), feat_g);
  }

  void apply_plan(const CentroidPlan& plan, const Tensor& feat_g) {
    if (feat_g.rows() != plan.source_coef.cols() || feat_g.cols() != feature_dim()) {
      throw DimensionError("update_centroids: feature matrix " + shape_string(feat_g.shape()) +
                           " does not match the batch plan");
    }
    const Tensor rs = centroid_values(plan.source_coef, plan.source_offset, feat_g);
    const Tensor rt = centroid_values(plan.target_coef, plan.target_offset, feat_g);
    for (std::size_t c = 0; c < num_classes(); ++c) {
      if (plan.source_present[c]) {
        std::copy_n(rs.row_ptr(c), feature_dim(), centroid_source_.row_ptr(c));
        seen_source_[c] = true;
      }
      if (plan.target_present[c]) {
        std::copy_n(rt.row_ptr(c), feature_dim(), centroid_target_.row_ptr(c));
        seen_target_[c] = true;
      }
    }
  }

  /// Top-K and bottom-K classes by commonness among classes with both
  /// centroids seen. Ties break by ascending class id; the two sets are
  /// disjoint, so at least 2K eligible classes are needed.
  CgSelection select() const {
    std::vector<std::size_t> eligible;
    for (std::size_t c = 0; c < num_classes(); ++c)
      if (seen_source_[c] && seen_target_[c]) eligible.push_back(c);
    CgSelection sel;
    if (eligible.size() < 2 * top_k_) return sel;
    std::vector<std::size_t> desc = eligible;
    std::stable_sort(desc.begin(), desc.end(),
                     [&](std::size_t a, std::size_t b) { return class_commonness_[a] > class_commonness_[b]; });
    sel.top.assign(desc.begin(), desc.begin() + static_cast<std::ptrdiff_t>(top_k_));
    std::vector<std::size_t> asc;
    for (std::size_t c : eligible)
      if (std::find(sel.top.begin(), sel.top.end(), c) == sel.top.end()) asc.push_back(c);
    std::stable_sort(asc.begin(), asc.end(),
                     [&](std::size_t a, std::size_t b) { return class_commonness_[a] < class_commonness_[b]; });
    sel.bottom.assign(asc.begin(), asc.begin() + static_cast<std::ptrdiff_t>(top_k_));
    sel.k = top_k_;
    return sel;
  }

  /// Value of the confidence-guided loss on the stored centroids; 0 when fewer
  /// than 2K classes are eligible.
  double confidence_guided_loss() const {
    const CgSelection sel = select();
    if (!sel.active()) return 0.0;
    double attract = 0.0, repel = 0.0;
    for (std::size_t c : sel.top) attract += squared_gap(c);
    for (std::size_t c : sel.bottom) {
      const double gap = squared_gap(c);
      repel += margin_clamp_ ? std::min(gap, *margin_clamp_) : gap;
    }
    return (attract - repel) / (2.0 * static_cast<double>(sel.k));
  }

  double squared_gap(std::size_t c) const {
    double s = 0.0;
    for (std::size_t j = 0; j < feature_dim(); ++j) {
      const double diff = centroid_source_(c, j) - centroid_target_(c, j);
      s += diff * diff;
    }
    return s;
  }

 private:
  std::size_t checked_class(int y) const {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes()) {
      throw ValidationError("class id " + std::to_string(y) + " out of range");
    }
    return static_cast<std::size_t>(y);
  }

  static Tensor centroid_values(const Tensor& coef, const Tensor& offset, const Tensor& feat) {
    Tensor r = matmul_values(coef, feat);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += offset[i];
    return r;
  }

  std::vector<double> class_commonness_;
  std::vector<bool> commonness_seen_;
  Tensor centroid_source_;
  Tensor centroid_target_;
  std::vector<bool> seen_source_;
  std::vector<bool> seen_target_;
  double alpha_ = 0.7;
  std::size_t top_k_ = 1;
  std::optional<double> margin_clamp_;
};

/// Differentiable confidence-guided loss. Gradient reaches feat_g only through
/// the current batch's share of each centroid; the EMA history is constant.
inline Var confidence_guided_loss(Var feat_g, const CentroidPlan& plan, const CgSelection& sel,
                                  std::optional<double> margin_clamp = std::nullopt) {
  Tape& t = *feat_g.tape;
  if (!sel.active()) return t.constant(Tensor::scalar(0.0));
  const Var rs = add_constant(matmul(t.constant(plan.source_coef), feat_g), plan.source_offset);
  const Var rt = add_constant(matmul(t.constant(plan.target_coef), feat_g), plan.target_offset);
  const Var diff = sub(rs, rt);
  const Var gaps = sum_cols(mul(diff, diff));  // N_c x 1

  const std::size_t nc = plan.source_coef.rows();
  const double scale_k = 1.0 / (2.0 * static_cast<double>(sel.k));
  Tensor attract = Tensor::matrix(1, nc), repel = Tensor::matrix(1, nc);
  for (std::size_t c : sel.top) attract[c] = scale_k;
  for (std::size_t c : sel.bottom) repel[c] = -scale_k;
  const Var pull = matmul(t.constant(attract), gaps);
  const Var push = matmul(t.constant(repel), margin_clamp ? clamp_max(gaps, *margin_clamp) : gaps);
  return add(pull, push);
}

}  // namespace apda

#endif  // APDA_OBJECTIVES_HPP
