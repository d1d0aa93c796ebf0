#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "normlab/optimize.hpp"
#include "normlab/regularize.hpp"
#include "normlab/reparam.hpp"

using namespace normlab;

TEST(Optimize, SgdHandStep) {
  WeightGroup g{{1, 0}, ReparamKind::identity(), "g"};
  Optimizer(OptimizerSpec::sgd(0.1)).step(g, Vec{1, 1}, 0);
  EXPECT_DOUBLE_EQ(g.w[0], 0.9);
  EXPECT_DOUBLE_EQ(g.w[1], -0.1);
}

TEST(Optimize, SgdWithL2FactorsAsDecayedWeights) {
  RngStream rng(31);
  for (int t = 0; t < 100; ++t) {
    Vec w(6), u(6);
    for (double& x : w) x = rng.normal();
    for (double& x : u) x = rng.normal();
    const double lam = rng.uniform(0, 1), eta = rng.uniform(0.01, 0.5);
    WeightGroup g{w, ReparamKind::wn(), "g"};
    const Vec task = backward(g, u);
    Vec grad = task;
    const Vec rg = reg_grad(g, RegularizerSpec::l2(lam));
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += rg[i];
    Optimizer(OptimizerSpec::sgd(eta)).step(g, grad, 0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_NEAR(g.w[i], (1 - lam * eta) * w[i] - eta * task[i], 1e-15 * 8);
    }
  }
}

TEST(Optimize, AdamFirstStepClosedForm) {
  const Vec w{0.5, -1.0, 2.0}, grad{3.0, -1e-3, 1e-6};
  WeightGroup g{w, ReparamKind::identity(), "g"};
  const auto spec = OptimizerSpec::adam(1e-3);
  Optimizer(spec).step(g, grad, 0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_NEAR(g.w[i], w[i] - 1e-3 * grad[i] / (std::abs(grad[i]) + spec.eps_adam), 1e-15);
  }
}

TEST(Optimize, MomentumZeroEqualsSgd) {
  RngStream rng(32);
  WeightGroup a{{0.3, -0.2, 1.1}, ReparamKind::identity(), "a"};
  WeightGroup b = a;
  Optimizer sgd(OptimizerSpec::sgd(0.05)), mom(OptimizerSpec::momentum(0.05, 0.0));
  for (std::size_t t = 0; t < 50; ++t) {
    Vec grad(3);
    for (double& x : grad) x = rng.normal();
    sgd.step(a, grad, t);
    mom.step(b, grad, t);
    ASSERT_EQ(a.w, b.w);
  }
}

TEST(Optimize, MomentumAccumulates) {
  WeightGroup g{{0.0}, ReparamKind::identity(), "g"};
  Optimizer opt(OptimizerSpec::momentum(1.0, 0.5));
  opt.step(g, Vec{1.0}, 0);  // b = 1
  opt.step(g, Vec{1.0}, 1);  // b = 1.5
  EXPECT_DOUBLE_EQ(g.w[0], -2.5);
}

TEST(Optimize, AdamStepCounter) {
  WeightGroup g{{1.0, 2.0}, ReparamKind::identity(), "g"};
  Optimizer opt(OptimizerSpec::adam());
  EXPECT_EQ(opt.steps_applied("g"), 0u);
  for (std::size_t t = 0; t < 3; ++t) opt.step(g, Vec{0.1, 0.2}, t);
  EXPECT_EQ(opt.steps_applied("g"), 3u);
}

TEST(Optimize, NonFiniteGradientOverflowsAndLeavesWeights) {
  WeightGroup g{{1, 2}, ReparamKind::wn(), "L0.r3"};
  Optimizer opt(OptimizerSpec::sgd(0.1));
  try {
    opt.step(g, Vec{std::numeric_limits<double>::quiet_NaN(), 0}, 17);
    FAIL();
  } catch (const OverflowError& e) {
    EXPECT_EQ(e.group_id(), "L0.r3");
    EXPECT_EQ(e.step(), 17u);
  }
  EXPECT_EQ(g.w, (Vec{1, 2}));
  EXPECT_EQ(opt.steps_applied("L0.r3"), 0u);
}

TEST(Optimize, NonFiniteResultOverflows) {
  WeightGroup g{{1e308, 0}, ReparamKind::identity(), "g"};
  EXPECT_THROW(Optimizer(OptimizerSpec::sgd(10.0)).step(g, Vec{-1e308, 0}, 0), OverflowError);
}

TEST(Optimize, OverflowRaisedOnFirstBadStep) {
  // Gradient doubles every step; the first step whose result is inf must raise.
  WeightGroup g{{1.0}, ReparamKind::identity(), "g"};
  Optimizer opt(OptimizerSpec::sgd(1.0));
  std::size_t raised = 0;
  double grad = -1e300;
  for (std::size_t t = 0; t < 100; ++t) {
    const double before = g.w[0];
    try {
      opt.step(g, Vec{grad}, t);
    } catch (const OverflowError& e) {
      raised = e.step();
      EXPECT_TRUE(std::isinf(before - grad));
      break;
    }
    ASSERT_TRUE(std::isfinite(g.w[0]));
    grad *= 2;
  }
  // w = 1 + 1e300 (2^(t+1) - 1) passes DBL_MAX at t = 27.
  EXPECT_EQ(raised, 27u);
}

TEST(Optimize, NormCollapseOfNormalizedGroupOverflows) {
  WeightGroup g{{1, 1}, ReparamKind::wn(), "g"};
  EXPECT_THROW(Optimizer(OptimizerSpec::sgd(1.0)).step(g, Vec{1, 1}, 0), OverflowError);
  WeightGroup h{{1, 1}, ReparamKind::identity(), "h"};
  EXPECT_NO_THROW(Optimizer(OptimizerSpec::sgd(1.0)).step(h, Vec{1, 1}, 0));
}

TEST(Optimize, EtaMustBePositive) {
  EXPECT_THROW(Optimizer(OptimizerSpec::sgd(0.0)), InvalidHyperparameterError);
}

TEST(Optimize, ScheduleMultipliers) {
  EXPECT_EQ(LrSchedule::constant().multiplier(12345), 1.0);
  const auto s = LrSchedule::step_decay(0.5, 10);
  EXPECT_EQ(s.multiplier(9), 1.0);
  EXPECT_EQ(s.multiplier(10), 0.5);
  EXPECT_EQ(s.multiplier(25), 0.25);
  const auto m = LrSchedule::multipliers({2.0, 3.0});
  EXPECT_EQ(m.multiplier(1), 3.0);
  EXPECT_THROW(m.multiplier(2), ConfigError);
}

TEST(Optimize, ScheduleScalesSgdStep) {
  WeightGroup g{{0.0}, ReparamKind::identity(), "g"};
  Optimizer(OptimizerSpec::sgd(0.1)).step(g, Vec{1.0}, 1, LrSchedule::multipliers({1.0, 4.0}));
  EXPECT_DOUBLE_EQ(g.w[0], -0.4);
}

TEST(OptimizeProperty, GroupOrderDoesNotMatter) {
  RngStream rng(33);
  std::vector<WeightGroup> a;
  for (int i = 0; i < 5; ++i) {
    Vec w(4);
    for (double& x : w) x = rng.normal();
    a.push_back({w, ReparamKind::wn(), "g" + std::to_string(i)});
  }
  auto b = a;
  std::vector<Vec> grads;
  for (int i = 0; i < 5; ++i) {
    Vec g(4);
    for (double& x : g) x = rng.normal();
    grads.push_back(g);
  }
  Optimizer o1(OptimizerSpec::adam(0.01)), o2(OptimizerSpec::adam(0.01));
  for (std::size_t t = 0; t < 3; ++t) {
    for (int i = 0; i < 5; ++i) o1.step(a[i], grads[i], t);
    for (int i = 4; i >= 0; --i) o2.step(b[i], grads[i], t);
  }
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i].w, b[i].w);
}

// ---- multipliers

TEST(Multipliers, FirstMultiplier) {
  const auto m = make_equivalence_multipliers(1e-4, 0.1, 5, 1.0);
  EXPECT_DOUBLE_EQ(m.d[0], 1.0 / (1.0 - 1e-5));
  EXPECT_EQ(m.p[0], 1.0);
}

TEST(Multipliers, NoDecayIsConstant) {
  const auto m = make_equivalence_multipliers(0.0, 0.1, 10, 2.0);
  for (double d : m.d) EXPECT_DOUBLE_EQ(d, 0.25);
}

TEST(Multipliers, HalfDecaySequence) {
  const auto m = make_equivalence_multipliers(5.0, 0.1, 3, 1.0);
  EXPECT_EQ(m.p, (Vec{1.0, 0.5, 0.25}));
  EXPECT_EQ(m.d, (Vec{2.0, 8.0, 32.0}));
}

TEST(Multipliers, InvalidHyperparameters) {
  EXPECT_THROW(make_equivalence_multipliers(10.0, 0.1, 3, 1.0), InvalidHyperparameterError);
  EXPECT_THROW(make_equivalence_multipliers(20.0, 0.1, 3, 1.0), InvalidHyperparameterError);
  EXPECT_THROW(make_equivalence_multipliers(1.0, 0.1, 0, 1.0), InvalidHyperparameterError);
  EXPECT_THROW(make_equivalence_multipliers(1.0, 0.1, 3, 0.0), InvalidHyperparameterError);
}

namespace {

double angle(const Vec& w) { return std::atan2(w[1], w[0]); }

}  // namespace

TEST(Multipliers, MatchBruteForceTrajectoryOracle) {
  // n = 2 WN group, linear task L = u . A. Run the decayed trajectory, then
  // at each step bisect for the learning-rate scalar that lands the
  // undecayed run on the same direction. That scalar must be d_q.
  const double lam = 5.0, eta = 0.1;  // lambda eta = 0.5
  const Vec u{0.3, -1.0};
  const auto m = make_equivalence_multipliers(lam, eta, 3, 1.0);
  WeightGroup dec{{1.0, 2.0}, ReparamKind::wn(), "a"};
  WeightGroup und = dec;
  for (std::size_t q = 0; q < 3; ++q) {
    Vec grad = backward(dec, u);
    for (std::size_t i = 0; i < 2; ++i) grad[i] += lam * dec.w[i];
    for (std::size_t i = 0; i < 2; ++i) dec.w[i] -= eta * grad[i];

    const Vec g = backward(und, u);
    const double target = angle(dec.w);
    auto gap = [&](double d) {
      const Vec w{und.w[0] - eta * d * g[0], und.w[1] - eta * d * g[1]};
      return angle(w) - target;
    };
    double lo = 0.0, hi = 1e3;
    ASSERT_LT(gap(lo) * gap(hi), 0.0);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (gap(lo) * gap(mid) <= 0.0 ? hi : lo) = mid;
    }
    const double solved = 0.5 * (lo + hi);
    EXPECT_NEAR(solved, m.d[q], 1e-9 * m.d[q]) << "q=" << q;
    for (std::size_t i = 0; i < 2; ++i) und.w[i] -= eta * m.d[q] * g[i];
  }
}
