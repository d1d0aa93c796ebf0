#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/reparam.hpp"

namespace normlab {

enum class OptimizerKind { SGD, SGDMomentum, Adam };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::SGD;
  double eta = 0.1;
  double mu = 0.9;  // SGDMomentum
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;

  static OptimizerSpec sgd(double eta) { return {OptimizerKind::SGD, eta}; }
  static OptimizerSpec momentum(double eta, double mu = 0.9) {
    return {OptimizerKind::SGDMomentum, eta, mu};
  }
  static OptimizerSpec adam(double eta = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                            double eps_adam = 1e-8) {
    return {OptimizerKind::Adam, eta, 0.9, beta1, beta2, eps_adam};
  }
};

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::SGD: return "sgd";
    case OptimizerKind::SGDMomentum: return "momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "momentum" || s == "sgd-momentum") return OptimizerKind::SGDMomentum;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

/// Learning-rate multiplier per 0-based update index t (t = 0 is the update
/// taking the initial weights to step 1).
struct LrSchedule {
  struct Constant {};
  struct StepDecay {
    double factor = 0.1;
    std::size_t every = 1;
  };
  struct Multipliers {
    std::vector<double> d;
  };

  std::variant<Constant, StepDecay, Multipliers> rule = Constant{};

  static LrSchedule constant() { return {}; }
  static LrSchedule step_decay(double factor, std::size_t every) {
    if (every == 0) throw ConfigError("step decay 'every' must be >= 1");
    return {StepDecay{factor, every}};
  }
  static LrSchedule multipliers(std::vector<double> d) { return {Multipliers{std::move(d)}}; }

  double multiplier(std::size_t t) const {
    if (std::holds_alternative<Constant>(rule)) return 1.0;
    if (const auto* s = std::get_if<StepDecay>(&rule)) {
      return std::pow(s->factor, static_cast<double>(t / s->every));
    }
    const auto& m = std::get<Multipliers>(rule);
    if (t >= m.d.size()) {
      throw ConfigError("learning-rate multiplier sequence has " + std::to_string(m.d.size()) +
                        " entries, step " + std::to_string(t) + " requested");
    }
    return m.d[t];
  }
};

/// Optimizer with per-group buffers keyed by group id. Weight decay is not
/// applied here; it arrives through the gradient.
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(spec) {
    if (!(spec_.eta > 0.0)) throw InvalidHyperparameterError("eta must be > 0");
  }

  const OptimizerSpec& spec() const { return spec_; }

  /// One update of `params` (identified by `id`) at 0-based update index t.
  /// Throws OverflowError, leaving params untouched, when the gradient, a
  /// moment buffer or the updated parameters are not finite.
  void step(std::span<double> params, std::span<const double> grad, const std::string& id,
            std::size_t t, const LrSchedule& sched = {}) {
    apply(params, grad, id, t, sched, nullptr);
  }

  /// As above; for a normalized group the update also overflows when the
  /// group's norm (std for WS) collapses to zero, since 1/||w|| is then infinite.
  void step(WeightGroup& g, std::span<const double> grad, std::size_t t,
            const LrSchedule& sched = {}) {
    apply(g.w, grad, g.id, t, sched, &g.kind);
  }

  /// Number of updates applied to a group so far (the Adam step counter).
  std::size_t steps_applied(const std::string& id) const {
    const auto it = buffers_.find(id);
    return it == buffers_.end() ? 0 : it->second.steps;
  }

 private:
  struct Buffers {
    Vec first;   // momentum or Adam first moment
    Vec second;  // Adam second moment
    std::size_t steps = 0;
  };

  void apply(std::span<double> params, std::span<const double> grad, const std::string& id,
             std::size_t t, const LrSchedule& sched, const ReparamKind* kind) {
    require_same_length(params.size(), grad.size(), "optimizer step");
    if (!all_finite(grad)) throw OverflowError(id, t, "non-finite gradient");
    const double lr = spec_.eta * sched.multiplier(t);
    Buffers& buf = buffers_[id];
    if (buf.first.empty()) {
      buf.first.assign(params.size(), 0.0);
      buf.second.assign(params.size(), 0.0);
    }
    require_same_length(buf.first.size(), params.size(), "optimizer buffers");

    Vec next(params.begin(), params.end());
    Vec first = buf.first;
    Vec second = buf.second;
    switch (spec_.kind) {
      case OptimizerKind::SGD:
        for (std::size_t i = 0; i < next.size(); ++i) next[i] -= lr * grad[i];
        break;
      case OptimizerKind::SGDMomentum:
        for (std::size_t i = 0; i < next.size(); ++i) {
          first[i] = spec_.mu * first[i] + grad[i];
          next[i] -= lr * first[i];
        }
        break;
      case OptimizerKind::Adam: {
        const auto count = static_cast<double>(buf.steps + 1);
        const double c1 = 1.0 - std::pow(spec_.beta1, count);
        const double c2 = 1.0 - std::pow(spec_.beta2, count);
        for (std::size_t i = 0; i < next.size(); ++i) {
          first[i] = spec_.beta1 * first[i] + (1.0 - spec_.beta1) * grad[i];
          second[i] = spec_.beta2 * second[i] + (1.0 - spec_.beta2) * grad[i] * grad[i];
          next[i] -= lr * (first[i] / c1) / (std::sqrt(second[i] / c2) + spec_.eps_adam);
        }
        if (!all_finite(second)) throw OverflowError(id, t, "non-finite second moment");
        break;
      }
    }
    if (!all_finite(first)) throw OverflowError(id, t, "non-finite moment buffer");
    if (!all_finite(next)) throw OverflowError(id, t, "non-finite weights after update");
    if (kind && kind->normalized()) {
      const double mag = kind->type == ReparamType::WS ? mean_std(next).std : norm2(next);
      if (!(mag > 0.0) && !(kind->type == ReparamType::WS && kind->eps_denom > 0.0)) {
        throw OverflowError(id, t, "weight magnitude underflowed to zero");
      }
    }

    std::copy(next.begin(), next.end(), params.begin());
    buf.first = std::move(first);
    buf.second = std::move(second);
    ++buf.steps;
  }

  OptimizerSpec spec_;
  std::map<std::string, Buffers> buffers_;
};

struct EquivalenceMultipliers {
  Vec p;  // p_0 .. p_{T-1}: scale between the decayed and undecayed runs before update q
  Vec d;  // d[q] multiplies eta for the update taken from state q
};

/// Learning-rate multipliers under which plain SGD on the undecayed objective
/// reproduces the normalized-weight trajectory of SGD with L2 weight decay:
/// p_{q+1} = (1 - lambda eta) p_q and d_q = 1 / (p_q^2 (1 - lambda eta)).
inline EquivalenceMultipliers make_equivalence_multipliers(double lambda, double eta, std::size_t T,
                                                     double p0) {
  const double decay = lambda * eta;
  if (!(decay >= 0.0) || !(decay < 1.0)) {
    throw InvalidHyperparameterError("lambda * eta must lie in [0, 1); got " +
                                     std::to_string(decay));
  }
  if (T == 0) throw InvalidHyperparameterError("T must be >= 1");
  if (!(p0 > 0.0)) throw InvalidHyperparameterError("p0 must be > 0");
  EquivalenceMultipliers out;
  out.p.reserve(T);
  out.d.reserve(T);
  double p = p0;
  for (std::size_t q = 0; q < T; ++q) {
    out.p.push_back(p);
    out.d.push_back(1.0 / (p * p * (1.0 - decay)));
    p *= 1.0 - decay;
  }
  return out;
}

}  // namespace normlab
