#ifndef APDA_NETWORKS_HPP
#define APDA_NETWORKS_HPP

// The six networks and their wiring:
//
//   x -> F -> feat_F -> C -> probs_C                    (classifier never sees G)
//             feat_F -> G(., A_hat) -> feat_G -> GRL -> D  -> prob_D
//                                      feat_G -> sg  -> C' -> probs_Caux
//                                      feat_G -> sg  -> D' -> prob_Daux
//
// sg = stop-gradient, unless the auxiliary heads are explicitly coupled.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "apda/autodiff.hpp"
#include "apda/crg.hpp"

namespace apda {

enum class Role : std::size_t { F = 0, C, CAux, D, DAux, G };

inline constexpr std::array<Role, 6> kAllRoles{Role::F, Role::C, Role::CAux, Role::D, Role::DAux, Role::G};

inline std::string_view role_name(Role r) {
  switch (r) {
    case Role::F: return "F";
    case Role::C: return "C";
    case Role::CAux: return "C_aux";
    case Role::D: return "D";
    case Role::DAux: return "D_aux";
    case Role::G: return "G";
  }
  return "?";
}

inline Role role_from_name(std::string_view name) {
  for (Role r : kAllRoles)
    if (role_name(r) == name) return r;
  throw ParseError("unknown network role '" + std::string(name) + "'");
}

enum class OutputKind { Logits, SigmoidProb, Features };

struct MlpSpec {
  std::vector<std::size_t> layer_widths;  // input width first
  OutputKind output_kind = OutputKind::Logits;
  bool bias = true;

  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }
  std::size_t layer_count() const { return layer_widths.size() - 1; }

  void validate(std::string_view what) const {
    if (layer_widths.size() < 2) throw ValidationError(std::string(what) + ": an MLP needs at least one layer");
    for (auto w : layer_widths)
      if (w == 0) throw ValidationError(std::string(what) + ": layer widths must be positive");
  }
};

struct Layer {
  Tensor weight;              // in x out
  std::optional<Tensor> bias;  // 1 x out

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct ParamSet {
  std::array<std::vector<Layer>, 6> roles;

  std::vector<Layer>& role(Role r) { return roles[static_cast<std::size_t>(r)]; }
  const std::vector<Layer>& role(Role r) const { return roles[static_cast<std::size_t>(r)]; }

  /// Flat view in (role, layer, weight, bias) order; stable across calls.
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (auto& layers : roles)
      for (auto& l : layers) {
        out.push_back(&l.weight);
        if (l.bias) out.push_back(&*l.bias);
      }
    return out;
  }

  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& layers : roles)
      for (const auto& l : layers) {
        out.push_back(&l.weight);
        if (l.bias) out.push_back(&*l.bias);
      }
    return out;
  }

  /// Role of each entry of tensors().
  std::vector<Role> tensor_roles() const {
    std::vector<Role> out;
    for (Role r : kAllRoles)
      for (const auto& l : role(r)) {
        out.push_back(r);
        if (l.bias) out.push_back(r);
      }
    return out;
  }

  bool all_finite() const {
    for (const Tensor* t : tensors())
      if (!t->all_finite()) return false;
    return true;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

/// Layer widths for every role. The graph stack must start at the feature width.
struct Architecture {
  std::size_t input_dim = 2;
  std::size_t num_classes = 6;
  std::vector<std::size_t> feature_widths{64, 64};
  std::vector<std::size_t> graph_widths{64};
  std::vector<std::size_t> discriminator_hidden{32};

  std::array<MlpSpec, 6> specs() const {
    if (feature_widths.empty() || graph_widths.empty()) {
      throw ValidationError("architecture: feature and graph stacks need at least one layer");
    }
    std::array<MlpSpec, 6> s;
    const std::size_t feat = feature_widths.back();
    const std::size_t gfeat = graph_widths.back();

    s[static_cast<std::size_t>(Role::F)].layer_widths.push_back(input_dim);
    for (auto w : feature_widths) s[static_cast<std::size_t>(Role::F)].layer_widths.push_back(w);
    s[static_cast<std::size_t>(Role::F)].output_kind = OutputKind::Features;

    s[static_cast<std::size_t>(Role::C)] = MlpSpec{{feat, num_classes}, OutputKind::Logits, true};
    s[static_cast<std::size_t>(Role::CAux)] = MlpSpec{{gfeat, num_classes}, OutputKind::Logits, true};

    MlpSpec disc{{gfeat}, OutputKind::SigmoidProb, true};
    for (auto w : discriminator_hidden) disc.layer_widths.push_back(w);
    disc.layer_widths.push_back(1);
    s[static_cast<std::size_t>(Role::D)] = disc;
    s[static_cast<std::size_t>(Role::DAux)] = disc;

    MlpSpec g{{feat}, OutputKind::Features, false};
    for (auto w : graph_widths) g.layer_widths.push_back(w);
    s[static_cast<std::size_t>(Role::G)] = g;
    return s;
  }
};

/// He-uniform weights (U(-sqrt(6/fan_in), +sqrt(6/fan_in))), zero biases.
inline ParamSet init_params(const std::array<MlpSpec, 6>& specs, std::size_t num_classes, std::uint64_t seed) {
  for (Role r : kAllRoles) specs[static_cast<std::size_t>(r)].validate(role_name(r));
  for (Role r : {Role::C, Role::CAux}) {
    if (specs[static_cast<std::size_t>(r)].output_width() != num_classes) {
      throw ValidationError(std::string(role_name(r)) + " output width must equal the number of classes (" +
                            std::to_string(num_classes) + ")");
    }
  }
  for (Role r : {Role::D, Role::DAux}) {
    const auto& s = specs[static_cast<std::size_t>(r)];
    if (s.output_width() != 1 || s.output_kind != OutputKind::SigmoidProb) {
      throw ValidationError(std::string(role_name(r)) + " must end in a single sigmoid unit");
    }
  }
  const auto& f = specs[static_cast<std::size_t>(Role::F)];
  const auto& g = specs[static_cast<std::size_t>(Role::G)];
  if (g.input_width() != f.output_width() || specs[static_cast<std::size_t>(Role::C)].input_width() != f.output_width()) {
    throw ValidationError("F output width must feed C and G");
  }
  for (Role r : {Role::D, Role::DAux, Role::CAux}) {
    if (specs[static_cast<std::size_t>(r)].input_width() != g.output_width()) {
      throw ValidationError(std::string(role_name(r)) + " input width must equal the graph output width");
    }
  }

  std::mt19937_64 rng(seed);
  ParamSet params;
  for (Role r : kAllRoles) {
    const auto& spec = specs[static_cast<std::size_t>(r)];
    auto& layers = params.role(r);
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      const std::size_t in = spec.layer_widths[l], out = spec.layer_widths[l + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Layer layer{Tensor::matrix(in, out), std::nullopt};
      for (auto& v : layer.weight.data()) v = dist(rng);
      if (spec.bias) layer.bias = Tensor::matrix(1, out);
      layers.push_back(std::move(layer));
    }
  }
  return params;
}

inline ParamSet init_params(const Architecture& arch, std::uint64_t seed) {
  return init_params(arch.specs(), arch.num_classes, seed);
}

// ---------------------------------------------------------------------------
// Forward wiring

struct BoundLayer {
  Var weight;
  std::optional<Var> bias;
};

/// ParamSet values placed on a tape, as variables (trainable) or constants.
struct BoundParams {
  std::array<std::vector<BoundLayer>, 6> roles;
  std::vector<Var> flat;  // aligned with ParamSet::tensors()

  const std::vector<BoundLayer>& role(Role r) const { return roles[static_cast<std::size_t>(r)]; }
};

inline BoundParams bind(Tape& tape, const ParamSet& params, bool trainable = true) {
  BoundParams b;
  for (Role r : kAllRoles) {
    for (const auto& l : params.role(r)) {
      BoundLayer bl{trainable ? tape.variable(l.weight) : tape.constant(l.weight), std::nullopt};
      b.flat.push_back(bl.weight);
      if (l.bias) {
        bl.bias = trainable ? tape.variable(*l.bias) : tape.constant(*l.bias);
        b.flat.push_back(*bl.bias);
      }
      b.roles[static_cast<std::size_t>(r)].push_back(bl);
    }
  }
  return b;
}

inline std::vector<Tensor> gradients(const Tape& tape, const BoundParams& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.flat.size());
  for (Var v : bound.flat) out.push_back(tape.grad(v));
  return out;
}

/// Dense layers with relu between them; `relu_last` also rectifies the output.
inline Var mlp_forward(Var x, const std::vector<BoundLayer>& layers, bool relu_last) {
  Var h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = matmul(h, layers[l].weight);
    if (layers[l].bias) h = add_row(h, *layers[l].bias);
    if (l + 1 < layers.size() || relu_last) h = relu(h);
  }
  return h;
}

inline Var extract_features(const BoundParams& p, Var x) { return mlp_forward(x, p.role(Role::F), true); }

inline Var classify(const BoundParams& p, Var feat_f) { return softmax_rows(mlp_forward(feat_f, p.role(Role::C), false)); }

inline GraphStack graph_stack(const BoundParams& p) {
  GraphStack stack;
  for (const auto& l : p.role(Role::G)) stack.weights.push_back(l.weight);
  stack.activations = GraphStack::default_activations(stack.weights.size());
  return stack;
}

struct ForwardOutputs {
  Var feat_f;
  Var feat_g;
  Var probs_c;
  Var prob_d;
  Var probs_caux;
  Var prob_daux;
};

struct GraphHeadOutputs {
  Var feat_g;
  Var prob_d;
  Var probs_caux;
  Var prob_daux;
};

/// Everything downstream of feat_F except the main classifier.
inline GraphHeadOutputs graph_heads(const BoundParams& p, Var feat_f, const Tensor& a_hat, double grl_lambda,
                                    bool couple_aux_heads = false) {
  GraphHeadOutputs out{};
  out.feat_g = propagate(feat_f, a_hat, graph_stack(p));
  out.prob_d = sigmoid(mlp_forward(grad_reverse(out.feat_g, grl_lambda), p.role(Role::D), false));
  const Var aux_in = couple_aux_heads ? out.feat_g : stop_gradient(out.feat_g);
  out.probs_caux = softmax_rows(mlp_forward(aux_in, p.role(Role::CAux), false));
  out.prob_daux = sigmoid(mlp_forward(aux_in, p.role(Role::DAux), false));
  return out;
}

inline ForwardOutputs forward_main(const BoundParams& p, Var x, const Tensor& a_hat, double grl_lambda,
                                   bool couple_aux_heads = false) {
  const std::size_t n = x.tape->value(x).rows();
  if (a_hat.rows() != n || a_hat.cols() != n) {
    throw DimensionError("forward_main: adjacency " + shape_string(a_hat.shape()) + " does not match batch of " +
                         std::to_string(n));
  }
  ForwardOutputs out{};
  out.feat_f = extract_features(p, x);
  out.probs_c = classify(p, out.feat_f);
  const auto heads = graph_heads(p, out.feat_f, a_hat, grl_lambda, couple_aux_heads);
  out.feat_g = heads.feat_g;
  out.prob_d = heads.prob_d;
  out.probs_caux = heads.probs_caux;
  out.prob_daux = heads.prob_daux;
  return out;
}

/// softmax(C(F(x))): no graph, no discriminators, any batch size.
inline Tensor forward_inference(const ParamSet& params, const Tensor& x) {
  const auto& f = params.role(Role::F);
  if (f.empty() || x.cols() != f.front().weight.rows()) {
    throw DimensionError("forward_inference: input has " + std::to_string(x.cols()) + " features, network expects " +
                         (f.empty() ? std::string("?") : std::to_string(f.front().weight.rows())));
  }
  Tape tape;
  const BoundParams p = bind(tape, params, false);
  return tape.value(classify(p, extract_features(p, tape.constant(x))));
}

inline std::vector<int> predict_labels(const Tensor& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = static_cast<int>(argmax_row(probs, i));
  return out;
}

}  // namespace apda

#endif  // APDA_NETWORKS_HPP
