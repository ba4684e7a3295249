#ifndef APDA_TRAINER_HPP
#define APDA_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "apda/autodiff.hpp"
#include "apda/crg.hpp"
#include "apda/networks.hpp"
#include "apda/objectives.hpp"
#include "apda/optim.hpp"
#include "apda/synth_data.hpp"

namespace apda {

enum class Variant { SourceOnly, Dann, Base, Crg, Apda };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::SourceOnly, Variant::Dann, Variant::Base, Variant::Crg,
                                                      Variant::Apda};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::SourceOnly: return "source_only";
    case Variant::Dann: return "dann";
    case Variant::Base: return "base";
    case Variant::Crg: return "crg";
    case Variant::Apda: return "apda";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == s) return v;
  throw ValidationError("unknown variant '" + std::string(s) + "' (expected source_only|dann|base|crg|apda)");
}

/// Which components a variant switches on. Every variant runs the same
/// network; components are masked, never removed.
struct VariantFlags {
  bool domain_loss = false;
  bool weighting = false;
  bool graph = false;
  bool guidance = false;
};

inline VariantFlags flags_for(Variant v) {
  switch (v) {
    case Variant::SourceOnly: return {false, false, false, false};
    case Variant::Dann: return {true, false, false, false};
    case Variant::Base: return {true, true, false, false};
    case Variant::Crg: return {true, true, true, false};
    case Variant::Apda: return {true, true, true, true};
  }
  return {};
}

struct TrainConfig {
  Variant variant = Variant::Apda;
  double lr0 = 1e-3;
  double lr_alpha = 10.0;
  double lr_beta = 0.75;
  double head_lr_multiplier = 10.0;
  double grl_gamma = 10.0;
  double lambda_c = 1.0;
  double ema_alpha = 0.7;
  double momentum = 0.9;
  std::size_t top_k = 0;  // 0: max(1, ceil(0.1 * N_c))
  int epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::optional<double> margin_clamp;
  TargetLabelMode target_labels = TargetLabelMode::Soft;
  bool couple_aux_heads = false;
  bool unit_centroid_features = true;
  // Ablation hooks used by the variant-lattice checks.
  bool force_identity_adjacency = false;
  bool force_unit_weights = false;
  std::vector<std::size_t> feature_widths{64, 64};
  std::vector<std::size_t> graph_widths{64};
  std::vector<std::size_t> discriminator_hidden{32};

  void validate() const {
    if (!(lr0 > 0.0)) throw ValidationError("train config: lr0 must be positive");
    if (epochs < 1) throw ValidationError("train config: epochs must be at least 1");
    if (!(head_lr_multiplier > 0.0)) throw ValidationError("train config: head_lr_multiplier must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train config: momentum must lie in [0, 1)");
    if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw ValidationError("train config: ema_alpha must lie in [0, 1]");
    if (lambda_c < 0.0) throw ValidationError("train config: lambda_c must be non-negative");
    if (grl_gamma < 0.0) throw ValidationError("train config: grl_gamma must be non-negative");
    if (margin_clamp && !(*margin_clamp > 0.0)) throw ValidationError("train config: margin_clamp must be positive");
    if (batch_size < 2 || batch_size % 2) throw ValidationError("train config: batch_size must be even and >= 2");
  }

  Architecture architecture(std::size_t input_dim, std::size_t num_classes) const {
    return Architecture{input_dim, num_classes, feature_widths, graph_widths, discriminator_hidden};
  }

  std::size_t resolved_top_k(std::size_t num_classes) const {
    return top_k ? top_k : default_top_k(num_classes);
  }
};

/// lr_0 / (1 + alpha p)^beta, the base (feature extractor) rate.
inline double lr_schedule(double p, const TrainConfig& cfg) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("lr_schedule: p must lie in [0, 1]");
  return cfg.lr0 * std::pow(1.0 + cfg.lr_alpha * p, -cfg.lr_beta);
}

/// 2 / (1 + exp(-gamma p)) - 1, ramping from 0 toward 1.
inline double grl_lambda_schedule(double p, const TrainConfig& cfg) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("grl_lambda_schedule: p must lie in [0, 1]");
  return 2.0 / (1.0 + std::exp(-cfg.grl_gamma * p)) - 1.0;
}

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double p = 0.0;
  double lr = 0.0;
  double lambda = 0.0;
  double loss_c = 0.0;
  double loss_d = 0.0;
  double loss_cg = 0.0;
  double loss_aux_c = 0.0;
  double loss_aux_d = 0.0;
  double total = 0.0;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;  // steps completed at the end of this epoch
  double target_accuracy = 0.0;
  double mean_w_common = 0.0;
  double mean_w_private = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct MetricsLog {
  std::vector<StepMetrics> steps;
  std::vector<EpochMetrics> epochs;

  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Quantities held fixed while differentiating one step.
struct StepConstants {
  Tensor a_hat;
  std::vector<double> weights;  // weights applied to L_c and the source side of L_d
  WeightVector commonness;      // computed commonness (applied or not)
  std::vector<int> pseudo_labels;
  CentroidPlan plan;
  CgSelection selection;
  double grl_lambda = 0.0;
};

struct StepGraph {
  ForwardOutputs out;
  Var total;
  Var loss_c;
  Var loss_d;
  Var loss_cg;
  Var loss_aux_c;
  Var loss_aux_d;
};

inline Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) throw DimensionError("stack_rows: column counts differ");
  std::vector<double> data(top.data());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Tensor({top.rows() + bottom.rows(), top.cols()}, std::move(data));
}

inline Var centroid_features(Var feat_g, const TrainConfig& cfg) {
  return cfg.unit_centroid_features ? l2_normalize_rows(feat_g) : feat_g;
}

/// Records one step's objective on `tape`.
///
/// With `state` set, the step's constants (adjacency, weights, pseudo labels,
/// centroid plan, top/bottom-K selection) are derived from the forward values,
/// `state` receives this batch's EMA updates, and the constants are written to
/// `k`. With `state` null, the constants in `k` are replayed as given; this is
/// what finite-difference checks use.
inline StepGraph build_step(Tape& tape, const BoundParams& p, const Batch& batch, const TrainConfig& cfg,
                            CommonnessState* state, StepConstants& k) {
  const VariantFlags flags = flags_for(cfg.variant);
  const std::size_t ns = batch.source_x.rows();
  const std::size_t n = ns + batch.target_x.rows();
  const Var x = tape.constant(stack_rows(batch.source_x, batch.target_x));

  StepGraph g{};
  g.out.feat_f = extract_features(p, x);
  g.out.probs_c = classify(p, g.out.feat_f);

  if (state) {
    const Tensor target_probs = tape.value(g.out.probs_c).rows_slice(ns, n);
    k.pseudo_labels = predict_labels(target_probs);
    if (flags.graph && !cfg.force_identity_adjacency) {
      k.a_hat = build_adjacency(build_label_matrix(batch.source_labels, target_probs, target_probs.cols(),
                                                   cfg.target_labels))
                    .a_hat;
    } else {
      k.a_hat = Tensor::identity(n);
    }
  }

  const auto heads = graph_heads(p, g.out.feat_f, k.a_hat, k.grl_lambda, cfg.couple_aux_heads);
  g.out.feat_g = heads.feat_g;
  g.out.prob_d = heads.prob_d;
  g.out.probs_caux = heads.probs_caux;
  g.out.prob_daux = heads.prob_daux;
  const Var feat_c = centroid_features(g.out.feat_g, cfg);

  if (state) {
    k.commonness = sample_commonness(tape.value(g.out.probs_caux).rows_slice(0, ns),
                                     tape.value(g.out.prob_daux).rows_slice(0, ns));
    if (flags.weighting && !cfg.force_unit_weights) {
      k.weights = k.commonness.w;
    } else {
      k.weights.assign(ns, 1.0);
    }
    state->update_class_commonness(k.commonness.w, batch.source_labels);
    k.plan = state->centroid_plan(batch.source_labels, k.pseudo_labels);
    state->apply_plan(k.plan, tape.value(feat_c));
    k.selection = state->select();
  }

  const std::vector<double> ones(ns, 1.0);
  const Var zero = tape.constant(Tensor::scalar(0.0));

  g.loss_c = weighted_classifier_loss(slice_rows(g.out.probs_c, 0, ns), batch.source_labels, k.weights);
  g.loss_aux_c = weighted_classifier_loss(slice_rows(g.out.probs_caux, 0, ns), batch.source_labels, ones);
  g.loss_aux_d = weighted_domain_loss(slice_rows(g.out.prob_daux, 0, ns), ones, slice_rows(g.out.prob_daux, ns, n));

  Var total = add(g.loss_c, add(g.loss_aux_c, g.loss_aux_d));
  g.loss_d = zero;
  if (flags.domain_loss) {
    g.loss_d = weighted_domain_loss(slice_rows(g.out.prob_d, 0, ns), k.weights, slice_rows(g.out.prob_d, ns, n));
    total = add(total, g.loss_d);
  }
  g.loss_cg = zero;
  if (flags.guidance && cfg.lambda_c > 0.0 && k.selection.active()) {
    g.loss_cg = confidence_guided_loss(feat_c, k.plan, k.selection, cfg.margin_clamp);
    total = add(total, scale(g.loss_cg, cfg.lambda_c));
  }
  g.total = total;
  return g;
}

/// Mutable state of one training run.
struct TrainerState {
  ParamSet params;
  std::vector<Tensor> velocity;
  CommonnessState commonness;
};

inline std::vector<double> learning_rates(const ParamSet& params, double base_lr, double head_multiplier) {
  std::vector<double> lrs;
  for (Role r : params.tensor_roles()) lrs.push_back(r == Role::F ? base_lr : base_lr * head_multiplier);
  return lrs;
}

struct StepOutcome {
  StepMetrics metrics;
  StepConstants constants;
};

/// One joint update of every parameter group at progress p in [0, 1].
inline StepOutcome train_step(const Batch& batch, TrainerState& st, const TrainConfig& cfg, double p) {
  StepOutcome res;
  res.metrics.p = p;
  res.metrics.lr = lr_schedule(p, cfg);
  res.metrics.lambda = grl_lambda_schedule(p, cfg);
  res.constants.grl_lambda = res.metrics.lambda;

  Tape tape;
  const BoundParams bound = bind(tape, st.params);
  const StepGraph g = build_step(tape, bound, batch, cfg, &st.commonness, res.constants);

  res.metrics.loss_c = tape.value(g.loss_c).item();
  res.metrics.loss_d = tape.value(g.loss_d).item();
  res.metrics.loss_cg = tape.value(g.loss_cg).item();
  res.metrics.loss_aux_c = tape.value(g.loss_aux_c).item();
  res.metrics.loss_aux_d = tape.value(g.loss_aux_d).item();
  res.metrics.total = tape.value(g.total).item();
  if (!std::isfinite(res.metrics.total)) {
    std::ostringstream os;
    os << "non-finite loss at p=" << p << ": L_c=" << res.metrics.loss_c << " L_d=" << res.metrics.loss_d
       << " L_cg=" << res.metrics.loss_cg << " L_aux_c=" << res.metrics.loss_aux_c
       << " L_aux_d=" << res.metrics.loss_aux_d << " lr=" << res.metrics.lr << " lambda=" << res.metrics.lambda;
    throw NonFiniteLoss(os.str());
  }

  tape.backward(g.total);
  const std::vector<Tensor> grads = gradients(tape, bound);
  const auto tensors = st.params.tensors();
  sgd_step(tensors, grads, learning_rates(st.params, res.metrics.lr, cfg.head_lr_multiplier), cfg.momentum,
           st.velocity);
  if (!st.params.all_finite()) throw NonFiniteLoss("parameters became non-finite after the update at p=" +
                                                   std::to_string(p));
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double accuracy = 0.0;
  std::vector<int> classes;                  // target classes, ascending
  std::vector<double> per_class_accuracy;    // aligned with classes
  std::vector<std::size_t> per_class_count;  // aligned with classes
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted], N_c x N_c
};

/// Target accuracy of argmax C(F(x)) against the hidden labels.
inline EvalReport evaluate(const ParamSet& params, const PdaDataset& ds) {
  const auto& truth = ds.hidden_target_labels();
  const std::vector<int> pred = predict_labels(forward_inference(params, ds.target_x()));
  const std::size_t nc = ds.num_classes();
  EvalReport r;
  r.confusion.assign(nc, std::vector<std::size_t>(nc, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto q = static_cast<std::size_t>(pred[i]);
    if (q < nc) ++r.confusion[t][q];
    if (truth[i] == pred[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  for (int c : ds.target_classes()) {
    const auto& row = r.confusion[static_cast<std::size_t>(c)];
    const std::size_t count = std::accumulate(row.begin(), row.end(), std::size_t{0});
    r.classes.push_back(c);
    r.per_class_count.push_back(count);
    r.per_class_accuracy.push_back(count ? static_cast<double>(row[static_cast<std::size_t>(c)]) /
                                               static_cast<double>(count)
                                         : 0.0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Full-dataset pass for diagnostics

struct ExportResult {
  std::vector<double> source_w;    // commonness per source sample
  std::vector<double> source_raw;
  Tensor source_features;          // G(F(x)) per source sample
  Tensor target_features;
  std::vector<int> target_predictions;
  double mean_w_common = std::numeric_limits<double>::quiet_NaN();
  double mean_w_private = std::numeric_limits<double>::quiet_NaN();
};

/// Runs training-shaped batches (graph included) over the whole dataset so
/// every source sample gets exactly one commonness score and every sample one
/// graph feature. Batches wrap around; only first visits are recorded.
inline ExportResult export_pass(const ParamSet& params, const PdaDataset& ds, const TrainConfig& cfg) {
  const std::size_t ns = ds.source_size(), nt = ds.target_size();
  const std::size_t h = std::min({cfg.batch_size / 2, ns, nt});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> sorder(ns), torder(nt);
  std::iota(sorder.begin(), sorder.end(), std::size_t{0});
  std::iota(torder.begin(), torder.end(), std::size_t{0});
  std::shuffle(sorder.begin(), sorder.end(), rng);
  std::shuffle(torder.begin(), torder.end(), rng);

  const VariantFlags flags = flags_for(cfg.variant);
  const std::size_t gdim = params.role(Role::G).back().weight.cols();
  ExportResult ex;
  ex.source_w.assign(ns, 0.0);
  ex.source_raw.assign(ns, 0.0);
  ex.source_features = Tensor::matrix(ns, gdim);
  ex.target_features = Tensor::matrix(nt, gdim);
  ex.target_predictions = predict_labels(forward_inference(params, ds.target_x()));
  std::vector<bool> sdone(ns, false), tdone(nt, false);

  const std::size_t batches = std::max((ns + h - 1) / h, (nt + h - 1) / h);
  for (std::size_t b = 0; b < batches; ++b) {
    Batch batch{Tensor::matrix(h, ds.dim()), {}, {}, Tensor::matrix(h, ds.dim()), {}};
    for (std::size_t k = 0; k < h; ++k) {
      const std::size_t si = sorder[(b * h + k) % ns];
      const std::size_t ti = torder[(b * h + k) % nt];
      std::copy_n(ds.source_x().row_ptr(si), ds.dim(), batch.source_x.row_ptr(k));
      std::copy_n(ds.target_x().row_ptr(ti), ds.dim(), batch.target_x.row_ptr(k));
      batch.source_labels.push_back(ds.source_labels()[si]);
      batch.source_index.push_back(si);
      batch.target_index.push_back(ti);
    }
    Tape tape;
    const BoundParams bound = bind(tape, params, false);
    const Var x = tape.constant(stack_rows(batch.source_x, batch.target_x));
    const Var feat_f = extract_features(bound, x);
    const Tensor target_probs = tape.value(classify(bound, feat_f)).rows_slice(h, 2 * h);
    const Tensor a_hat = (flags.graph && !cfg.force_identity_adjacency)
                             ? build_adjacency(build_label_matrix(batch.source_labels, target_probs,
                                                                  target_probs.cols(), cfg.target_labels))
                                   .a_hat
                             : Tensor::identity(2 * h);
    const auto heads = graph_heads(bound, feat_f, a_hat, 1.0);
    const Tensor& fg = tape.value(heads.feat_g);
    const WeightVector wv = sample_commonness(tape.value(heads.probs_caux).rows_slice(0, h),
                                              tape.value(heads.prob_daux).rows_slice(0, h));
    for (std::size_t k = 0; k < h; ++k) {
      const std::size_t si = batch.source_index[k];
      if (!sdone[si]) {
        sdone[si] = true;
        ex.source_w[si] = wv.w[k];
        ex.source_raw[si] = wv.raw[k];
        std::copy_n(fg.row_ptr(k), gdim, ex.source_features.row_ptr(si));
      }
      const std::size_t ti = batch.target_index[k];
      if (!tdone[ti]) {
        tdone[ti] = true;
        std::copy_n(fg.row_ptr(h + k), gdim, ex.target_features.row_ptr(ti));
      }
    }
  }

  if (ds.has_target_labels()) {
    double sc = 0.0, sp = 0.0;
    std::size_t nc = 0, np = 0;
    for (std::size_t i = 0; i < ns; ++i) {
      if (ds.is_common_class(ds.source_labels()[i])) {
        sc += ex.source_w[i];
        ++nc;
      } else {
        sp += ex.source_w[i];
        ++np;
      }
    }
    if (nc) ex.mean_w_common = sc / static_cast<double>(nc);
    if (np) ex.mean_w_private = sp / static_cast<double>(np);
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainResult {
  ParamSet params;
  CommonnessState commonness;
  MetricsLog log;
  ExportResult exports;
  bool coverage_warning = false;
  // apda steps whose L_cg was 0 because fewer than 2K classes had both
  // centroids seen.
  std::size_t cg_skipped_steps = 0;
};

/// Derives the batch-order seed from the run seed so parameter init and data
/// order are decorrelated.
inline std::uint64_t data_seed(std::uint64_t seed) {
  std::seed_seq seq{seed, std::uint64_t{0xda7a}};
  std::array<std::uint64_t, 1> out{};
  seq.generate(out.begin(), out.end());
  return out[0];
}

inline TrainResult train(const TrainConfig& cfg, const PdaDataset& ds) {
  cfg.validate();
  const std::size_t nc = ds.num_classes();
  const Architecture arch = cfg.architecture(ds.dim(), nc);
  TrainerState st{init_params(arch, cfg.seed), {},
                  CommonnessState(nc, arch.graph_widths.back(), cfg.ema_alpha, cfg.resolved_top_k(nc),
                                  cfg.margin_clamp)};

  BatchIterator batches(ds, cfg.batch_size, data_seed(cfg.seed));
  const std::size_t steps_per_epoch = batches.steps_per_epoch();
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  const bool labeled = ds.has_target_labels();

  TrainResult res;
  res.coverage_warning = batches.coverage_warning();
  res.log.steps.reserve(total_steps);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double w_common = 0.0, w_private = 0.0;
    std::size_t n_common = 0, n_private = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const Batch batch = batches.next();
      const double p = total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 0.0;
      StepOutcome out = train_step(batch, st, cfg, p);
      if (flags_for(cfg.variant).guidance && cfg.lambda_c > 0.0 && !out.constants.selection.active()) {
        ++res.cg_skipped_steps;
      }
      out.metrics.step = step;
      out.metrics.epoch = static_cast<std::size_t>(epoch);
      res.log.steps.push_back(out.metrics);
      if (labeled) {
        for (std::size_t i = 0; i < batch.source_labels.size(); ++i) {
          if (ds.is_common_class(batch.source_labels[i])) {
            w_common += out.constants.commonness.w[i];
            ++n_common;
          } else {
            w_private += out.constants.commonness.w[i];
            ++n_private;
          }
        }
      }
    }
    EpochMetrics em;
    em.epoch = static_cast<std::size_t>(epoch);
    em.step = step;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    em.target_accuracy = labeled ? evaluate(st.params, ds).accuracy : nan;
    em.mean_w_common = n_common ? w_common / static_cast<double>(n_common) : nan;
    em.mean_w_private = n_private ? w_private / static_cast<double>(n_private) : nan;
    res.log.epochs.push_back(em);
  }

  res.exports = export_pass(st.params, ds, cfg);
  res.params = std::move(st.params);
  res.commonness = std::move(st.commonness);
  return res;
}

}  // namespace apda

#endif  // APDA_TRAINER_HPP
