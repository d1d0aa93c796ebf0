#include <gtest/gtest.h>

#include "normlab/regularize.hpp"
#include "oracle.hpp"

using namespace normlab;

namespace {

WeightGroup wn(Vec w) { return {std::move(w), ReparamKind::wn(), "g"}; }
WeightGroup ws(Vec w) { return {std::move(w), ReparamKind::ws(), "g"}; }

Vec fd_reg(const WeightGroup& g, const RegularizerSpec& s) {
  return oracle::central_gradient(
      [&](const Vec& x) { return reg_value({x, g.kind, g.id}, s); }, g.w);
}

}  // namespace

TEST(Regularize, ValueHandValues) {
  EXPECT_DOUBLE_EQ(reg_value(wn({3, 4}), RegularizerSpec::l2(2)), 25.0);
  EXPECT_DOUBLE_EQ(reg_value(wn({3, 4}), RegularizerSpec::eps_shifted(2, 5, ShiftStyle::Magnitude)), 0.0);
  EXPECT_DOUBLE_EQ(reg_value(ws({-1, 1}), RegularizerSpec::eps_shifted(1, 1, ShiftStyle::MeanStd)), 0.0);
  EXPECT_EQ(reg_value(wn({3, 4}), RegularizerSpec::none()), 0.0);
}

TEST(Regularize, GradHandValues) {
  const Vec a = reg_grad(wn({3, 4}), RegularizerSpec::eps_shifted(1, 5, ShiftStyle::Magnitude));
  EXPECT_EQ(a, (Vec{0, 0}));
  const Vec b = reg_grad(wn({3, 4}), RegularizerSpec::l2(0.1));
  EXPECT_DOUBLE_EQ(b[0], 0.3);
  EXPECT_DOUBLE_EQ(b[1], 0.4);
  const Vec c = reg_grad(wn({3, 4}), RegularizerSpec::eps_shifted(1, 2.5, ShiftStyle::Magnitude));
  EXPECT_DOUBLE_EQ(c[0], 1.5);
  EXPECT_DOUBLE_EQ(c[1], 2.0);
  EXPECT_EQ(reg_grad(wn({3, 4}), RegularizerSpec::none()), (Vec{0, 0}));
}

TEST(Regularize, StyleKindMismatchIsConfigError) {
  EXPECT_THROW(reg_value(ws({1, 2}), RegularizerSpec::eps_shifted(1, 1, ShiftStyle::Magnitude)), ConfigError);
  EXPECT_THROW(reg_grad(wn({1, 2}), RegularizerSpec::eps_shifted(1, 1, ShiftStyle::MeanStd)), ConfigError);
  const WeightGroup id{{1, 2}, ReparamKind::identity(), "b"};
  EXPECT_THROW(reg_value(id, RegularizerSpec::eps_shifted(1, 1, ShiftStyle::Magnitude)), ConfigError);
  const WeightGroup c{{1, 2}, ReparamKind::cwn(), "c"};
  EXPECT_NO_THROW(reg_value(c, RegularizerSpec::eps_shifted(1, 1, ShiftStyle::Magnitude)));
}

TEST(Regularize, InvalidCoefficients) {
  EXPECT_THROW(RegularizerSpec::l2(-1), ConfigError);
  EXPECT_THROW(RegularizerSpec::eps_shifted(1, -0.1, ShiftStyle::Magnitude), ConfigError);
}

TEST(Regularize, DegenerateGroups) {
  EXPECT_THROW(reg_grad(wn({0, 0}), RegularizerSpec::eps_shifted(1, 1, ShiftStyle::Magnitude)),
               DegenerateWeightError);
  EXPECT_THROW(reg_grad(ws({2, 2}), RegularizerSpec::eps_shifted(1, 1, ShiftStyle::MeanStd)),
               DegenerateWeightError);
}

TEST(Regularize, EpsForKindPicksStyle) {
  EXPECT_EQ(RegularizerSpec::eps_shifted_for(ReparamKind::ws(), 1, 2).style, ShiftStyle::MeanStd);
  EXPECT_EQ(RegularizerSpec::eps_shifted_for(ReparamKind::cwn(), 1, 2).style, ShiftStyle::Magnitude);
}

TEST(Regularize, LambdaZeroIsNoOp) {
  const auto s = RegularizerSpec::eps_shifted(0, 0.5, ShiftStyle::Magnitude);
  EXPECT_EQ(reg_value(wn({3, 4}), s), 0.0);
  EXPECT_EQ(reg_grad(wn({3, 4}), s), (Vec{0, 0}));
}

// ---- properties

TEST(RegularizeProperty, GradientsMatchFiniteDifferences) {
  RngStream rng(21);
  for (std::size_t n : {3u, 10u}) {
    for (int t = 0; t < 50; ++t) {
      Vec w(n);
      for (double& x : w) x = rng.uniform(-2, 2);
      const double lam = rng.uniform(0.01, 3), eps = rng.uniform(0.05, 2);
      const auto a = wn(w), b = ws(w);
      for (const auto& [g, s] :
           {std::pair{a, RegularizerSpec::l2(lam)}, std::pair{a, RegularizerSpec::eps_shifted(lam, eps, ShiftStyle::Magnitude)},
            std::pair{b, RegularizerSpec::eps_shifted(lam, eps, ShiftStyle::MeanStd)}}) {
        EXPECT_LT(oracle::rel_err(reg_grad(g, s), fd_reg(g, s)), 1e-7) << to_string(s) << " n=" << n;
      }
    }
  }
}

TEST(RegularizeProperty, MagnitudeGradientDirection) {
  RngStream rng(22);
  for (int t = 0; t < 200; ++t) {
    Vec w(5);
    for (double& x : w) x = rng.normal();
    const double k = norm2(w);
    const auto out = RegularizerSpec::eps_shifted(1, 0.5 * k, ShiftStyle::Magnitude);
    const auto in = RegularizerSpec::eps_shifted(1, 2.0 * k, ShiftStyle::Magnitude);
    EXPECT_GT(dot(w, reg_grad(wn(w), out)), 0.0);
    EXPECT_LT(dot(w, reg_grad(wn(w), in)), 0.0);
  }
}

TEST(RegularizeProperty, EpsZeroReproducesL2) {
  RngStream rng(23);
  for (int t = 0; t < 200; ++t) {
    Vec w(1 + rng.index(12));
    for (double& x : w) x = rng.normal();
    const double lam = rng.uniform(0, 2);
    const auto l2 = RegularizerSpec::l2(lam);
    const auto e0 = RegularizerSpec::eps_shifted(lam, 0.0, ShiftStyle::Magnitude);
    EXPECT_NEAR(reg_value(wn(w), e0), reg_value(wn(w), l2), 1e-14 * std::max(1.0, reg_value(wn(w), l2)));
    EXPECT_EQ(reg_grad(wn(w), e0), reg_grad(wn(w), l2));
  }
}

TEST(RegularizeProperty, DecayFactorIncreasesWithNorm) {
  for (double eps : {0.0, 0.1, 1.0}) {
    double prev = -1e300;
    for (double k = 0.05; k < 20; k *= 1.3) {
      const double f = effective_decay_factor(0.7, eps, k);
      if (eps > 0) EXPECT_GT(f, prev); else EXPECT_GE(f, prev);
      prev = f;
    }
  }
}
