#include <gtest/gtest.h>

#include <cmath>

#include "normlab/experiments.hpp"
#include "normlab/model.hpp"
#include "oracle.hpp"

using namespace normlab;

namespace {

Batch random_batch(RngStream& rng, std::size_t n, std::size_t dim, std::size_t classes) {
  Batch b;
  b.inputs = Mat(n, dim);
  for (double& x : b.inputs.values) x = rng.normal();
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(rng.index(classes));
  return b;
}

Network random_net(const std::vector<LayerSpec>& layers, std::uint64_t seed) {
  RngStream rng(seed);
  Network net = Network::build(layers, rng);
  for (auto& l : net.layers)
    for (double& b : l.bias) b = rng.normal(0.0, 0.1);
  return net;
}

}  // namespace

TEST(Model, UniformLogitsGiveLn2) {
  LayerSpec s;
  s.in_dim = 3;
  s.out_dim = 2;
  s.kind = ReparamKind::identity();
  RngStream rng(1);
  Network net = Network::build({s}, rng);
  net.for_each_group([](WeightGroup& g) { std::fill(g.w.begin(), g.w.end(), 0.0); });
  RngStream data(2);
  const auto eval = forward_loss(net, random_batch(data, 5, 3, 2));
  EXPECT_NEAR(eval.loss, std::log(2.0), 1e-15);
}

TEST(Model, WnLossInvariantToScale) {
  RngStream data(3);
  const Batch b = random_batch(data, 16, 2, 3);
  Network net = random_net(mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn()), 4);
  const double l1 = forward_loss(net, b).loss;
  net.for_each_group([](WeightGroup& g) {
    for (double& x : g.w) x *= 10.0;
  });
  EXPECT_NEAR(forward_loss(net, b).loss, l1, 1e-14 * std::abs(l1));
}

TEST(Model, L2OnNormalizedWeightsIsConstant) {
  const double lam = 0.2;
  RngStream data(5);
  const Batch b = random_batch(data, 8, 2, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Network net = random_net(mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn()), seed);
    const double task = forward_loss(net, b).loss;
    double reg = 0.0;
    net.for_each_group([&](const WeightGroup& g) {
      reg += reg_value({forward(g), ReparamKind::identity(), g.id}, RegularizerSpec::l2(lam));
    });
    EXPECT_NEAR(task + reg, task + 0.5 * lam * 19, 1e-12);
  }
}

TEST(Model, ZeroInputGradientIsSoftmaxMinusOnehot) {
  LayerSpec s;
  s.in_dim = 2;
  s.out_dim = 2;
  s.kind = ReparamKind::wn();
  RngStream rng(6);
  const Network net = Network::build({s}, rng);
  Batch b;
  b.inputs = Mat(1, 2);
  b.labels = {0};
  const auto eval = forward_loss(net, b);
  EXPECT_NEAR(eval.loss, std::log(2.0), 1e-15);
  const auto g = backward(net, eval.cache);
  // p = [1/2, 1/2], y = e_0
  EXPECT_DOUBLE_EQ(g.bias[0][0], -0.5);
  EXPECT_DOUBLE_EQ(g.bias[0][1], 0.5);
  for (const auto& row : g.weights[0])
    for (double x : row) EXPECT_EQ(x, 0.0);
}

TEST(Model, BuildChecksDimensionChain) {
  auto layers = mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn());
  layers[1].in_dim = 15;
  RngStream rng(1);
  EXPECT_THROW(Network::build(layers, rng), ConfigError);
}

TEST(Model, BuildRejectsUnsupportedVariant) {
  auto layers = mlp_layers({2, 16, 3}, ReparamKind::cwn(), ReparamKind::cwn());
  layers[0].backward_variant = BackwardVariant::Diagonal;
  RngStream rng(1);
  EXPECT_THROW(Network::build(layers, rng), UnsupportedVariantError);
}

TEST(Model, SmallGroupsCarryWarnings) {
  RngStream rng(1);
  const Network net = Network::build(mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn()), rng);
  // first layer groups have 2 inputs, second layer 16
  ASSERT_EQ(net.warnings().size(), 1u);
  EXPECT_EQ(net.layers[0].warnings.size(), 1u);
  EXPECT_TRUE(net.layers[1].warnings.empty());
}

TEST(Model, LabelOutOfRange) {
  RngStream rng(1);
  const Network net = Network::build(mlp_layers({2, 3}, ReparamKind::wn(), ReparamKind::wn()), rng);
  Batch b;
  b.inputs = Mat(1, 2);
  b.labels = {3};
  EXPECT_THROW(forward_loss(net, b), DimensionError);
}

TEST(Model, EffectiveLr) {
  EXPECT_NEAR(effective_lr({{3, 4}, ReparamKind::wn(), "g"}, 0.1), 0.02, 1e-17);
  EXPECT_NEAR(effective_lr({{-1, 1}, ReparamKind::ws(), "g"}, 0.1), 0.1, 1e-17);
  EXPECT_NEAR(effective_lr({{3, 4}, ReparamKind::identity(), "g"}, 0.1, 2.0), 0.1 / 25, 1e-17);
  const double full = effective_lr({{3, 4}, ReparamKind::wn(), "g"}, 0.1);
  const double half = effective_lr({{1.5, 2}, ReparamKind::wn(), "g"}, 0.1);
  EXPECT_DOUBLE_EQ(half, 2 * full);
  EXPECT_THROW(effective_lr({{0, 0}, ReparamKind::wn(), "g"}, 0.1), DegenerateWeightError);
}

// ---- gradients against the independent oracle

class NetworkFd : public ::testing::TestWithParam<ReparamKind> {};

TEST_P(NetworkFd, ExactBackwardMatchesOracle) {
  const auto layers = mlp_layers({2, 16, 3}, GetParam(), GetParam());
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const Network net = random_net(layers, 100 + trial);
    RngStream data(200 + trial);
    const Batch b = random_batch(data, 8, 2, 3);
    const Vec analytic = oracle::flatten(backward(net, forward_loss(net, b).cache));
    const Vec fd = oracle::fd_network_gradient(net, b);
    EXPECT_LT(oracle::rel_err(analytic, fd), 1e-5) << to_string(GetParam());
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, NetworkFd,
                         ::testing::Values(ReparamKind::wn(), ReparamKind::ws(0.0), ReparamKind::ws(1e-5),
                                           ReparamKind::cwn(), ReparamKind::identity()));

TEST(Model, OracleLossAgreesWithLibrary) {
  const Network net = random_net(mlp_layers({2, 16, 3}, ReparamKind::ws(), ReparamKind::cwn()), 9);
  RngStream data(10);
  const Batch b = random_batch(data, 8, 2, 3);
  EXPECT_NEAR(forward_loss(net, b).loss, oracle::loss(net, b), 1e-13);
}

TEST(Model, DiagonalFailsNetworkGradcheck) {
  const auto layers = mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn(), true,
                                 BackwardVariant::Diagonal);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const Network net = random_net(layers, 300 + trial);
    RngStream data(400 + trial);
    const Batch b = random_batch(data, 8, 2, 3);
    const Vec analytic = oracle::flatten(backward(net, forward_loss(net, b).cache));
    worst = std::max(worst, oracle::rel_err(analytic, oracle::fd_network_gradient(net, b)));
  }
  EXPECT_GT(worst, 1e-5);
}

TEST(ModelProperty, WnRowGradientsOrthogonalToRows) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const Network net = random_net(mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn()), trial);
    RngStream data(50 + trial);
    const Batch b = random_batch(data, 8, 2, 3);
    const auto g = backward(net, forward_loss(net, b).cache);
    for (std::size_t l = 0; l < net.layers.size(); ++l)
      for (std::size_t r = 0; r < net.layers[l].groups.size(); ++r)
        EXPECT_NEAR(dot(net.layers[l].groups[r].w, g.weights[l][r]), 0.0, 1e-9);
  }
}

TEST(ModelProperty, RescalingWnGroupMovesOnlyTheL2Term) {
  const double lam = 0.3;
  auto layers = with_regularizer(mlp_layers({2, 16, 3}, ReparamKind::wn(), ReparamKind::wn()),
                                 RegularizerType::L2, lam);
  RngStream data(60);
  const Batch b = random_batch(data, 8, 2, 3);
  RngStream pick(61);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Network net = random_net(layers, trial);
    const double task0 = forward_loss(net, b).loss;
    const double reg0 = regularization_value(net);
    auto& g = net.layers[pick.index(2)].groups[0];
    const double k = norm2(g.w);
    const double c = std::exp(pick.uniform(-2, 2));
    for (double& x : g.w) x *= c;
    EXPECT_NEAR(forward_loss(net, b).loss, task0, 1e-12);
    EXPECT_NEAR(regularization_value(net) - reg0, (c * c - 1) * 0.5 * lam * k * k,
                1e-12 * std::max(1.0, reg0));
  }
}

TEST(ModelProperty, ShiftingWsGroupMovesOnlyMeanStdTerm) {
  const double lam = 0.3;
  auto layers = with_regularizer(mlp_layers({2, 16, 3}, ReparamKind::ws(), ReparamKind::ws()),
                                 RegularizerType::L2, lam);
  RngStream data(70);
  const Batch b = random_batch(data, 8, 2, 3);
  RngStream pick(71);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Network net = random_net(layers, trial);
    const double task0 = forward_loss(net, b).loss;
    auto& g = net.layers[1].groups[pick.index(3)];
    const double a = std::exp(pick.uniform(-1, 1)), s = pick.uniform(-2, 2);
    for (double& x : g.w) x = a * x + s;
    EXPECT_NEAR(forward_loss(net, b).loss, task0, 1e-12);
    // 1/2 lambda ||w||^2 = 1/2 lambda n (m^2 + v^2)
    const auto [m, v] = mean_std(g.w);
    const double n = static_cast<double>(g.w.size());
    EXPECT_NEAR(reg_value(g, RegularizerSpec::l2(lam)), 0.5 * lam * n * (m * m + v * v), 1e-12);
  }
}
