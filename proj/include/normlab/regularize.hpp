#pragma once

// Coupled regularizers. Values and gradients are taken with respect to the
// trainable W, and the gradient is added to the task gradient before the
// optimizer step.
//
//   L2                      1/2 lambda ||W||^2
//   EpsShiftedL2/Magnitude  1/2 lambda (||W|| - eps)^2
//   EpsShiftedL2/MeanStd    1/2 lambda n (m^2 + (v - eps)^2)

#include <cmath>
#include <cstddef>
#include <string>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/reparam.hpp"

namespace normlab {

enum class RegularizerType { None, L2, EpsShiftedL2 };
enum class ShiftStyle { Magnitude, MeanStd };

struct RegularizerSpec {
  RegularizerType type = RegularizerType::None;
  double lambda = 0.0;
  double epsilon = 0.0;
  ShiftStyle style = ShiftStyle::Magnitude;

  static RegularizerSpec none() { return {}; }
  static RegularizerSpec l2(double lambda) {
    return checked({RegularizerType::L2, lambda, 0.0, ShiftStyle::Magnitude});
  }
  static RegularizerSpec eps_shifted(double lambda, double epsilon, ShiftStyle style) {
    return checked({RegularizerType::EpsShiftedL2, lambda, epsilon, style});
  }
  /// The shifted style that matches a reparameterization (MeanStd for WS).
  static RegularizerSpec eps_shifted_for(const ReparamKind& kind, double lambda,
                                         double epsilon) {
    return eps_shifted(lambda, epsilon,
                       kind.type == ReparamType::WS ? ShiftStyle::MeanStd
                                                    : ShiftStyle::Magnitude);
  }

  friend bool operator==(const RegularizerSpec&, const RegularizerSpec&) = default;

 private:
  static RegularizerSpec checked(RegularizerSpec s) {
    if (!(s.lambda >= 0.0)) throw ConfigError("regularizer lambda must be >= 0");
    // epsilon = 0 is accepted: it collapses to plain L2.
    if (!(s.epsilon >= 0.0)) throw ConfigError("regularizer epsilon must be >= 0");
    return s;
  }
};

inline std::string to_string(const RegularizerSpec& s) {
  switch (s.type) {
    case RegularizerType::None: return "none";
    case RegularizerType::L2: return "l2";
    case RegularizerType::EpsShiftedL2:
      return s.style == ShiftStyle::Magnitude ? "eps-magnitude" : "eps-meanstd";
  }
  return "?";
}

namespace detail {

inline void check_style(const WeightGroup& g, const RegularizerSpec& s) {
  if (s.type != RegularizerType::EpsShiftedL2) return;
  const bool ok = s.style == ShiftStyle::Magnitude
                      ? (g.kind.type == ReparamType::WN || g.kind.type == ReparamType::CWN)
                      : g.kind.type == ReparamType::WS;
  if (!ok) {
    throw ConfigError("regularizer " + to_string(s) + " cannot be applied to a " +
                      to_string(g.kind) + " group ('" + g.id + "')");
  }
}

}  // namespace detail

inline double reg_value(const WeightGroup& g, const RegularizerSpec& s) {
  detail::check_style(g, s);
  switch (s.type) {
    case RegularizerType::None:
      return 0.0;
    case RegularizerType::L2:
      return 0.5 * s.lambda * dot(g.w, g.w);
    case RegularizerType::EpsShiftedL2: {
      if (s.style == ShiftStyle::Magnitude) {
        const double d = norm2(g.w) - s.epsilon;
        return 0.5 * s.lambda * d * d;
      }
      const auto [m, v] = mean_std(g.w);
      const auto n = static_cast<double>(g.w.size());
      return 0.5 * s.lambda * n * (m * m + (v - s.epsilon) * (v - s.epsilon));
    }
  }
  return 0.0;
}

inline Vec reg_grad(const WeightGroup& g, const RegularizerSpec& s) {
  detail::check_style(g, s);
  Vec out(g.w.size(), 0.0);
  switch (s.type) {
    case RegularizerType::None:
      return out;
    case RegularizerType::L2:
      return scaled(g.w, s.lambda);
    case RegularizerType::EpsShiftedL2: {
      if (s.epsilon == 0.0) return scaled(g.w, s.lambda);
      if (s.style == ShiftStyle::Magnitude) {
        const double k = norm2(g.w);
        if (!(k > 0.0)) throw DegenerateWeightError(g.id, "norm is zero");
        return scaled(g.w, s.lambda * (1.0 - s.epsilon / k));
      }
      const auto [m, v] = mean_std(g.w);
      if (!(v > 0.0)) throw DegenerateWeightError(g.id, "standard deviation is zero");
      const double r = s.epsilon / v;
      for (std::size_t i = 0; i < g.w.size(); ++i) {
        out[i] = s.lambda * ((1.0 - r) * g.w[i] + r * m);
      }
      return out;
    }
  }
  return out;
}

/// Per-coordinate decay coefficient of the magnitude-shifted regularizer,
/// lambda (1 - eps / ||W||); plain L2 is the eps = 0 case.
inline double effective_decay_factor(double lambda, double epsilon, double norm) {
  return lambda * (1.0 - epsilon / norm);
}

}  // namespace normlab
