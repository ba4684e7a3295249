#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "apda/networks.hpp"
#include "support/oracles.hpp"

using namespace apda;

namespace {

Architecture small_arch() {
  Architecture a;
  a.input_dim = 3;
  a.num_classes = 4;
  a.feature_widths = {8, 7};
  a.graph_widths = {6, 5};
  a.discriminator_hidden = {4};
  return a;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_zero(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

TEST(Roles, NamesRoundTrip) {
  for (Role r : kAllRoles) EXPECT_EQ(role_from_name(role_name(r)), r);
  EXPECT_THROW(role_from_name("Z"), ValidationError);
}

TEST(Init, SameSeedSameParameters) {
  EXPECT_EQ(init_params(small_arch(), 3), init_params(small_arch(), 3));
  EXPECT_FALSE(init_params(small_arch(), 3) == init_params(small_arch(), 4));
}

TEST(Init, ShapesFollowTheArchitecture) {
  const ParamSet p = init_params(small_arch(), 0);
  ASSERT_EQ(p.role(Role::F).size(), 2u);
  EXPECT_EQ(p.role(Role::F)[0].weight.shape(), (Shape{3, 8}));
  EXPECT_EQ(p.role(Role::F)[1].weight.shape(), (Shape{8, 7}));
  EXPECT_EQ(p.role(Role::C).back().weight.cols(), 4u);
  EXPECT_EQ(p.role(Role::CAux).back().weight.cols(), 4u);
  EXPECT_EQ(p.role(Role::CAux).front().weight.rows(), 5u);
  EXPECT_EQ(p.role(Role::D).back().weight.cols(), 1u);
  EXPECT_EQ(p.role(Role::G)[0].weight.shape(), (Shape{7, 6}));
  for (const auto& l : p.role(Role::G)) EXPECT_FALSE(l.bias.has_value());
  for (const auto& l : p.role(Role::F)) {
    ASSERT_TRUE(l.bias.has_value());
    EXPECT_TRUE(all_zero(*l.bias));
  }
  EXPECT_EQ(p.tensors().size(), p.tensor_roles().size());
}

TEST(Init, ClassifierWidthMustMatchClassCount) {
  auto specs = small_arch().specs();
  specs[static_cast<std::size_t>(Role::C)].layer_widths.back() = 3;
  EXPECT_THROW(init_params(specs, 4, 0), ValidationError);
  specs = small_arch().specs();
  specs[static_cast<std::size_t>(Role::D)].layer_widths.back() = 2;
  EXPECT_THROW(init_params(specs, 4, 0), ValidationError);
  specs = small_arch().specs();
  specs[static_cast<std::size_t>(Role::G)].layer_widths.front() = 9;
  EXPECT_THROW(init_params(specs, 4, 0), ValidationError);
}

TEST(Init, HeUniformVariance) {
  Architecture a;
  a.feature_widths = {64, 64};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ParamSet p = init_params(a, seed);
    const Tensor& w = p.role(Role::F)[1].weight;
    double mean = 0.0;
    for (double v : w.data()) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size());
    const double expected = 2.0 / 64.0;
    EXPECT_NEAR(var / expected, 1.0, 0.2) << "seed " << seed;
  }
}

TEST(Forward, OutputShapesAndRanges) {
  const ParamSet params = init_params(small_arch(), 1);
  std::mt19937_64 rng(1);
  Tape t;
  const BoundParams p = bind(t, params);
  const auto out = forward_main(p, t.constant(oracle::random_matrix(6, 3, rng)), Tensor::identity(6), 1.0);
  EXPECT_EQ(t.value(out.probs_c).shape(), (Shape{6, 4}));
  EXPECT_EQ(t.value(out.probs_caux).shape(), (Shape{6, 4}));
  EXPECT_EQ(t.value(out.prob_d).shape(), (Shape{6, 1}));
  EXPECT_EQ(t.value(out.feat_g).shape(), (Shape{6, 5}));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += t.value(out.probs_c)(i, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_GT(t.value(out.prob_d)(i, 0), 0.0);
    EXPECT_LT(t.value(out.prob_d)(i, 0), 1.0);
  }
}

TEST(Forward, AdjacencyShapeMismatchRejected) {
  const ParamSet params = init_params(small_arch(), 1);
  Tape t;
  const BoundParams p = bind(t, params);
  EXPECT_THROW(forward_main(p, t.constant(Tensor::matrix(4, 3)), Tensor::identity(5), 1.0), DimensionError);
}

TEST(Forward, IdentityAdjacencyDoesNotMixRows) {
  // With A_hat = I each row of feat_G depends on its own input row only.
  const ParamSet params = init_params(small_arch(), 2);
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_matrix(5, 3, rng);
  Tape t;
  const BoundParams p = bind(t, params, false);
  const Tensor full = t.value(forward_main(p, t.constant(x), Tensor::identity(5), 1.0).feat_g);
  for (std::size_t i = 0; i < 5; ++i) {
    Tape t1;
    const BoundParams p1 = bind(t1, params, false);
    const Tensor single = t1.value(forward_main(p1, t1.constant(x.rows_slice(i, i + 1)), Tensor::identity(1), 1.0).feat_g);
    for (std::size_t j = 0; j < full.cols(); ++j) EXPECT_NEAR(full(i, j), single(0, j), 1e-12);
  }
}

TEST(Forward, PermutationEquivariant) {
  const ParamSet params = init_params(small_arch(), 5);
  std::mt19937_64 rng(5);
  const std::size_t n = 7;
  const Tensor x = oracle::random_matrix(n, 3, rng);
  // Any symmetric nonnegative matrix exercises the mixing path.
  Tensor a = oracle::random_matrix(n, n, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) a(i, j) = a(j, i);

  Tape t;
  const BoundParams p = bind(t, params, false);
  const auto base = forward_main(p, t.constant(x), a, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto perm = oracle::random_permutation(n, rng);
    Tape tp;
    const BoundParams pp = bind(tp, params, false);
    const auto moved = forward_main(pp, tp.constant(oracle::permute_rows(x, perm)), oracle::permute_both(a, perm), 1.0);
    EXPECT_LE(max_abs_diff(tp.value(moved.feat_g), oracle::permute_rows(t.value(base.feat_g), perm)), 1e-12);
    EXPECT_LE(max_abs_diff(tp.value(moved.prob_d), oracle::permute_rows(t.value(base.prob_d), perm)), 1e-12);
    EXPECT_LE(max_abs_diff(tp.value(moved.probs_c), oracle::permute_rows(t.value(base.probs_c), perm)), 1e-12);
  }
}

TEST(Forward, InferenceMatchesTrainingClassifier) {
  const ParamSet params = init_params(small_arch(), 8);
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_matrix(6, 3, rng);
  Tape t;
  const BoundParams p = bind(t, params, false);
  const Tensor train_probs = t.value(forward_main(p, t.constant(x), Tensor::identity(6), 0.5).probs_c);
  EXPECT_EQ(forward_inference(params, x), train_probs);
  // Inference works for any batch size, including one.
  EXPECT_EQ(forward_inference(params, x.rows_slice(2, 3)).rows(), 1u);
  EXPECT_THROW(forward_inference(params, Tensor::matrix(2, 4)), DimensionError);
}

TEST(Forward, AuxiliaryHeadsDoNotTrainTheBackbone) {
  const ParamSet params = init_params(small_arch(), 9);
  std::mt19937_64 rng(9);
  Tape t;
  const BoundParams p = bind(t, params);
  const auto out = forward_main(p, t.constant(oracle::random_matrix(6, 3, rng)), Tensor::identity(6), 1.0);
  t.backward(add(sum(mul(out.probs_caux, t.constant(oracle::random_matrix(6, 4, rng)))), sum(out.prob_daux)));
  const auto grads = gradients(t, p);
  const auto roles = params.tensor_roles();
  bool aux_moved = false;
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (roles[k] == Role::F || roles[k] == Role::G || roles[k] == Role::C || roles[k] == Role::D) {
      EXPECT_TRUE(all_zero(grads[k])) << role_name(roles[k]);
    } else {
      aux_moved = aux_moved || !all_zero(grads[k]);
    }
  }
  EXPECT_TRUE(aux_moved);
}

TEST(Forward, CoupledAuxiliaryHeadsReachTheBackbone) {
  const ParamSet params = init_params(small_arch(), 9);
  std::mt19937_64 rng(9);
  Tape t;
  const BoundParams p = bind(t, params);
  const auto out = forward_main(p, t.constant(oracle::random_matrix(6, 3, rng)), Tensor::identity(6), 1.0, true);
  t.backward(sum(out.prob_daux));
  const auto grads = gradients(t, p);
  const auto roles = params.tensor_roles();
  bool g_moved = false;
  for (std::size_t k = 0; k < grads.size(); ++k)
    if (roles[k] == Role::G) g_moved = g_moved || !all_zero(grads[k]);
  EXPECT_TRUE(g_moved);
}

TEST(Forward, DiscriminatorGradientIsReversedBelowTheGate) {
  // Reference path: the same graph without the reversal gate.
  const ParamSet params = init_params(small_arch(), 11);
  std::mt19937_64 rng(11);
  const Tensor x = oracle::random_matrix(6, 3, rng);
  const double lambda = 0.6;

  Tape t;
  const BoundParams p = bind(t, params);
  const auto out = forward_main(p, t.constant(x), Tensor::identity(6), lambda);
  t.backward(sum(out.prob_d));
  const auto g_rev = gradients(t, p);

  Tape r;
  const BoundParams pr = bind(r, params);
  const Var feat_g = propagate(extract_features(pr, r.constant(x)), Tensor::identity(6), graph_stack(pr));
  r.backward(sum(sigmoid(mlp_forward(feat_g, pr.role(Role::D), false))));
  const auto g_ref = gradients(r, pr);

  const auto roles = params.tensor_roles();
  for (std::size_t k = 0; k < g_rev.size(); ++k) {
    const Role role = roles[k];
    if (role == Role::D) {
      EXPECT_EQ(g_rev[k], g_ref[k]);
    } else if (role == Role::F || role == Role::G) {
      ASSERT_FALSE(all_zero(g_ref[k]));
      for (std::size_t i = 0; i < g_ref[k].size(); ++i) EXPECT_NEAR(g_rev[k][i], -lambda * g_ref[k][i], 1e-12);
    }
  }
}

TEST(Predict, ArgmaxPerRow) {
  const Tensor probs = Tensor::from_rows({{0.1, 0.7, 0.2}, {0.5, 0.2, 0.3}, {0.2, 0.2, 0.6}});
  EXPECT_EQ(predict_labels(probs), (std::vector<int>{1, 0, 2}));
}
