#pragma once

// Harnesses that turn the weight-decay claims into pass/fail runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "normlab/data.hpp"
#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/model.hpp"
#include "normlab/optimize.hpp"
#include "normlab/regularize.hpp"
#include "normlab/reparam.hpp"
#include "normlab/telemetry.hpp"
#include "normlab/train.hpp"

namespace normlab {

namespace detail {

/// JSON cannot hold inf/nan; map them to strings so reports stay valid.
inline nlohmann::json real_json(double x) {
  if (std::isfinite(x)) return x;
  return format_real(x);
}

inline nlohmann::json real_array(const Vec& v) {
  auto a = nlohmann::json::array();
  for (double x : v) a.push_back(real_json(x));
  return a;
}

}  // namespace detail

/// Network layout for an MLP with the given widths, one kind for hidden
/// layers and one for the output layer.
inline std::vector<LayerSpec> mlp_layers(const std::vector<std::size_t>& dims, ReparamKind hidden,
                                         ReparamKind output, bool bias = true,
                                         BackwardVariant variant = BackwardVariant::Exact) {
  if (dims.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  std::vector<LayerSpec> out;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    LayerSpec s;
    s.in_dim = dims[l];
    s.out_dim = dims[l + 1];
    s.kind = l + 2 == dims.size() ? output : hidden;
    s.backward_variant = variant_supported(s.kind, variant) ? variant : BackwardVariant::Exact;
    s.has_bias = bias;
    out.push_back(s);
  }
  return out;
}

/// Normalized layers get the requested regularizer (shifted style picked
/// from the layer kind); unnormalized layers keep traditional L2 decay.
inline std::vector<LayerSpec> with_regularizer(std::vector<LayerSpec> layers,
                                               RegularizerType type, double lambda,
                                               double epsilon = 0.0) {
  for (auto& l : layers) {
    if (type == RegularizerType::None) {
      l.regularizer = RegularizerSpec::none();
    } else if (type == RegularizerType::L2 || !l.kind.normalized()) {
      l.regularizer = RegularizerSpec::l2(lambda);
    } else {
      l.regularizer = RegularizerSpec::eps_shifted_for(l.kind, lambda, epsilon);
    }
  }
  return layers;
}

// ---------------------------------------------------------------------------
// Trajectory equivalence between SGD with L2 decay and rescaled-LR SGD.

struct EquivalenceConfig {
  std::vector<LayerSpec> layers;  // scale-invariant kinds, no bias
  Activation activation = Activation::ReLU;
  double lambda = 1e-4;
  double eta = 0.1;
  std::size_t steps = 500;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  double p0 = 1.0;
  double direction_tolerance = 1e-6;
  double scale_tolerance = 1e-8;
};

struct EquivalenceReport {
  std::size_t steps = 0;
  Vec p_seq;               // p_0 .. p_T
  Vec d_seq;               // multiplier of update 1 .. T
  Vec direction_deviation; // per step: max |A_decay - A_scaled| over all weights
  Vec scale_deviation;     // per step: max relative gap of ||W_decay|| vs p_t ||W_scaled||
  double max_direction_deviation = 0.0;
  double max_scale_deviation = 0.0;
  double direction_tolerance = 0.0;
  double scale_tolerance = 0.0;
  bool overflow = false;
  std::string failure;
  bool pass = false;

  nlohmann::json to_json() const {
    return {{"steps", steps},
            {"p_seq", detail::real_array(p_seq)},
            {"d_seq", detail::real_array(d_seq)},
            {"direction_deviation", detail::real_array(direction_deviation)},
            {"scale_deviation", detail::real_array(scale_deviation)},
            {"max_direction_deviation", detail::real_json(max_direction_deviation)},
            {"max_scale_deviation", detail::real_json(max_scale_deviation)},
            {"direction_tolerance", direction_tolerance},
            {"scale_tolerance", scale_tolerance},
            {"overflow", overflow},
            {"failure", failure},
            {"verdict", pass ? "pass" : (overflow ? "fail(overflow)" : "fail")}};
  }
};

/// Run A minimizes task + L2(lambda) with constant eta; run B minimizes the
/// task alone with eta scaled by d_q. Both see the same batches and start
/// from W_A = p0 W_B.
inline EquivalenceReport run_equivalence(const EquivalenceConfig& cfg, const Batch& data) {
  for (const auto& l : cfg.layers) {
    if (!l.kind.scale_invariant()) {
      throw ConfigError("equivalence needs scale-invariant layers; got " + to_string(l.kind));
    }
    if (l.has_bias) throw ConfigError("equivalence needs bias-free layers");
  }
  const auto mult = make_equivalence_multipliers(cfg.lambda, cfg.eta, cfg.steps, cfg.p0);

  EquivalenceReport rep;
  rep.steps = cfg.steps;
  rep.p_seq = mult.p;
  rep.p_seq.push_back(mult.p.back() * (1.0 - cfg.lambda * cfg.eta));
  rep.d_seq = mult.d;
  rep.direction_tolerance = cfg.direction_tolerance;
  rep.scale_tolerance = cfg.scale_tolerance;

  RngStream rng_a = RngStream(cfg.seed).fork(1);
  RngStream rng_b = RngStream(cfg.seed).fork(1);
  Network decayed =
      Network::build(with_regularizer(cfg.layers, RegularizerType::L2, cfg.lambda), rng_a,
                     cfg.activation);
  Network scaled_lr =
      Network::build(with_regularizer(cfg.layers, RegularizerType::None, 0.0), rng_b,
                     cfg.activation);
  decayed.for_each_group([&](WeightGroup& g) {
    for (double& x : g.w) x *= cfg.p0;
  });

  Optimizer opt_a(OptimizerSpec::sgd(cfg.eta));
  Optimizer opt_b(OptimizerSpec::sgd(cfg.eta));
  const LrSchedule constant = LrSchedule::constant();
  const LrSchedule multipliers = LrSchedule::multipliers(mult.d);
  BatchSampler sampler(data, cfg.batch_size, RngStream(cfg.seed).fork(2).next_u64());

  auto sgd_step = [](Network& net, const Batch& batch, Optimizer& opt, std::size_t t,
                     const LrSchedule& sched) {
    const LossEval eval = forward_loss(net, batch);
    NetworkGradients grads = backward(net, eval.cache);
    add_regularizer_grads(net, grads);
    for (std::size_t l = 0; l < net.layers.size(); ++l)
      for (std::size_t r = 0; r < net.layers[l].groups.size(); ++r)
        opt.step(net.layers[l].groups[r], grads.weights[l][r], t, sched);
  };

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const Batch batch = sampler.next();
    try {
      sgd_step(decayed, batch, opt_a, t, constant);
      sgd_step(scaled_lr, batch, opt_b, t, multipliers);
    } catch (const OverflowError& e) {
      rep.overflow = true;
      rep.failure = e.what();
      return rep;
    } catch (const DegenerateWeightError& e) {
      rep.overflow = true;
      rep.failure = e.what();
      return rep;
    }
    const double p = rep.p_seq[t + 1];
    double dir = 0.0, scale = 0.0;
    for (std::size_t l = 0; l < decayed.layers.size(); ++l) {
      for (std::size_t r = 0; r < decayed.layers[l].groups.size(); ++r) {
        const WeightGroup& ga = decayed.layers[l].groups[r];
        const WeightGroup& gb = scaled_lr.layers[l].groups[r];
        dir = std::max(dir, max_abs_diff(forward(ga), forward(gb)));
        const double expect = p * norm2(gb.w);
        scale = std::max(scale, std::abs(norm2(ga.w) - expect) / expect);
      }
    }
    rep.direction_deviation.push_back(dir);
    rep.scale_deviation.push_back(scale);
    rep.max_direction_deviation = std::max(rep.max_direction_deviation, dir);
    rep.max_scale_deviation = std::max(rep.max_scale_deviation, scale);
  }
  rep.pass = rep.max_direction_deviation < cfg.direction_tolerance &&
             rep.max_scale_deviation < cfg.scale_tolerance;
  if (!rep.pass) rep.failure = "deviation above tolerance";
  return rep;
}

struct OneStepIdentity {
  Vec w_decayed;   // one SGD step on task + L2
  Vec w_rescaled;  // one SGD step on the task alone with eta * d_1
  double d1 = 0.0;
  double max_rel_error = 0.0;  // max |W_decayed - (1 - lambda eta) W_rescaled| / max |W_decayed|
};

/// First update from a shared start (p0 = 1) for a single WN group whose
/// task loss is linear in the normalized weights with gradient `grad_a`.
inline OneStepIdentity one_step_identity(std::span<const double> w0,
                                         std::span<const double> grad_a, double lambda,
                                         double eta,
                                         BackwardVariant variant = BackwardVariant::Exact) {
  const auto mult = make_equivalence_multipliers(lambda, eta, 1, 1.0);
  WeightGroup a{Vec(w0.begin(), w0.end()), ReparamKind::wn(), "decayed"};
  WeightGroup b{Vec(w0.begin(), w0.end()), ReparamKind::wn(), "rescaled"};

  Vec grad = backward(a, grad_a, variant);
  const Vec reg = reg_grad(a, RegularizerSpec::l2(lambda));
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += reg[i];
  Optimizer(OptimizerSpec::sgd(eta)).step(a, grad, 0);
  Optimizer(OptimizerSpec::sgd(eta))
      .step(b, backward(b, grad_a, variant), 0, LrSchedule::multipliers(mult.d));

  OneStepIdentity out{a.w, b.w, mult.d[0], 0.0};
  double scale = 0.0, err = 0.0;
  for (std::size_t i = 0; i < a.w.size(); ++i) {
    scale = std::max(scale, std::abs(a.w[i]));
    err = std::max(err, std::abs(a.w[i] - (1.0 - lambda * eta) * b.w[i]));
  }
  out.max_rel_error = err / scale;
  return out;
}

// ---------------------------------------------------------------------------
// Regularizer cancellation: L2 applied to the normalized weights is a constant.

struct CancellationReport {
  std::size_t restarts = 0;
  double lambda = 0.0;
  double expected_offset = 0.0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;

  nlohmann::json to_json() const {
    return {{"restarts", restarts},           {"lambda", lambda},
            {"expected_offset", expected_offset}, {"max_abs_error", max_abs_error},
            {"tolerance", tolerance},         {"verdict", pass ? "pass" : "fail"}};
  }
};

/// Analytic value of sum_g 1/2 lambda ||W'_g||^2: 1/2 lambda per WN/CWN
/// group and 1/2 lambda n per WS group (mean 0, std 1).
inline double cancellation_offset(const std::vector<LayerSpec>& layers, double lambda) {
  double off = 0.0;
  for (const auto& l : layers) {
    switch (l.kind.type) {
      case ReparamType::WN:
      case ReparamType::CWN:
        off += 0.5 * lambda * static_cast<double>(l.out_dim);
        break;
      case ReparamType::WS:
        if (l.kind.eps_denom != 0.0) {
          throw ConfigError("cancellation check needs WS without a denominator epsilon");
        }
        off += 0.5 * lambda * static_cast<double>(l.in_dim) * static_cast<double>(l.out_dim);
        break;
      case ReparamType::Identity:
        throw ConfigError("cancellation check needs every layer normalized");
    }
  }
  return off;
}

inline CancellationReport run_cancellation_check(const std::vector<LayerSpec>& layers,
                                                 const Batch& data, double lambda,
                                                 std::size_t restarts = 100,
                                                 std::uint64_t seed = 7,
                                                 double tolerance = 1e-12,
                                                 Activation activation = Activation::ReLU) {
  CancellationReport rep;
  rep.restarts = restarts;
  rep.lambda = lambda;
  rep.tolerance = tolerance;
  rep.expected_offset = cancellation_offset(layers, lambda);
  const RegularizerSpec l2 = RegularizerSpec::l2(lambda);
  for (std::size_t r = 0; r < restarts; ++r) {
    RngStream rng = RngStream(seed).fork(r);
    const Network net = Network::build(layers, rng, activation);
    const double task = forward_loss(net, data).loss;
    double reg = 0.0;
    net.for_each_group([&](const WeightGroup& g) {
      const WeightGroup normalized{forward(g), ReparamKind::identity(), g.id};
      reg += reg_value(normalized, l2);
    });
    const double objective = task + reg;
    rep.max_abs_error =
        std::max(rep.max_abs_error, std::abs(objective - task - rep.expected_offset));
  }
  rep.pass = rep.max_abs_error <= tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Global-minimum probe over (direction, length) for a single WN group.

using DirectionLoss = std::function<double(std::span<const double>)>;

/// `points` log-spaced values from lo to hi inclusive.
inline Vec log_grid(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi > lo) || points < 2) {
    throw ConfigError("log grid needs 0 < lo < hi and at least 2 points");
  }
  Vec g(points);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  g.front() = lo;
  g.back() = hi;
  return g;
}

/// Convex quadratic sum_i q_i (A_i - c_i)^2 with random positive weights q.
inline DirectionLoss quadratic_task(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  Vec q(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = rng.uniform(0.5, 2.0);
    c[i] = rng.normal();
  }
  return [q, c](std::span<const double> a) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * (a[i] - c[i]) * (a[i] - c[i]);
    return s;
  };
}

struct MinProbeReport {
  Vec k_grid;
  std::vector<Vec> directions;
  std::vector<Vec> profiles;  // objective over k_grid, per direction
  std::vector<std::size_t> argmin;
  double lambda = 0.0;
  std::optional<double> epsilon;
  // Plain L2: every profile strictly increasing in k, i.e. the objective keeps
  // dropping as k shrinks toward 0 and there is no interior minimum.
  bool monotone_toward_zero = false;
  bool flat = false;  // lambda = 0
  std::size_t best_direction = 0;
  double best_argmin_k = 0.0;
  bool pass = false;
  std::string detail;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"k_grid", detail::real_array(k_grid)},
                        {"lambda", lambda},
                        {"directions", directions.size()},
                        {"monotone_toward_zero", monotone_toward_zero},
                        {"flat", flat},
                        {"best_direction", best_direction},
                        {"best_argmin_k", best_argmin_k},
                        {"detail", this->detail},
                        {"verdict", pass ? "pass" : "fail"}};
    j["epsilon"] = epsilon ? nlohmann::json(*epsilon) : nlohmann::json(nullptr);
    return j;
  }
};

/// Evaluates task(W/||W||) + regularizer(W) on W = k A over a k grid for
/// `direction_samples` random unit directions A in R^n.
inline MinProbeReport run_min_probe(const DirectionLoss& task, std::size_t n, double lambda,
                                    std::optional<double> epsilon, const Vec& k_grid,
                                    std::size_t direction_samples, std::uint64_t seed = 7) {
  if (k_grid.size() < 2 || !(k_grid.front() > 0.0)) {
    throw ConfigError("min probe needs a strictly positive k grid");
  }
  for (std::size_t i = 1; i < k_grid.size(); ++i) {
    if (!(k_grid[i] > k_grid[i - 1])) throw ConfigError("min probe k grid must increase");
  }
  MinProbeReport rep;
  rep.k_grid = k_grid;
  rep.lambda = lambda;
  rep.epsilon = epsilon;
  const RegularizerSpec reg = epsilon
                                  ? RegularizerSpec::eps_shifted(lambda, *epsilon,
                                                                 ShiftStyle::Magnitude)
                                  : RegularizerSpec::l2(lambda);
  RngStream rng(seed);
  double best_task = std::numeric_limits<double>::infinity();
  rep.monotone_toward_zero = true;
  rep.flat = true;
  for (std::size_t d = 0; d < direction_samples; ++d) {
    Vec a(n);
    for (double& x : a) x = rng.normal();
    const double an = norm2(a);
    for (double& x : a) x /= an;
    Vec profile;
    for (double k : k_grid) {
      const WeightGroup g{scaled(a, k), ReparamKind::wn(), "probe"};
      profile.push_back(task(forward(g)) + reg_value(g, reg));
    }
    const auto lo = std::min_element(profile.begin(), profile.end());
    const auto hi = std::max_element(profile.begin(), profile.end());
    rep.argmin.push_back(static_cast<std::size_t>(lo - profile.begin()));
    for (std::size_t i = 1; i < profile.size(); ++i) {
      if (!(profile[i] > profile[i - 1])) rep.monotone_toward_zero = false;
    }
    if (*hi - *lo > 1e-14 * std::max(1.0, std::abs(*lo))) rep.flat = false;
    const double t = task(a);
    if (t < best_task) {
      best_task = t;
      rep.best_direction = d;
    }
    rep.directions.push_back(std::move(a));
    rep.profiles.push_back(std::move(profile));
  }
  rep.best_argmin_k = k_grid[rep.argmin[rep.best_direction]];

  if (lambda == 0.0) {
    rep.pass = rep.flat;
    rep.detail = rep.flat ? "k-profile flat" : "k-profile not flat with lambda = 0";
  } else if (!epsilon) {
    rep.pass = rep.monotone_toward_zero;
    rep.detail = rep.pass ? "objective decreases monotonically as k -> 0 along every direction"
                          : "found a direction with an interior minimum";
  } else {
    // Within one log-grid cell of epsilon.
    const double cell = std::log(k_grid[1] / k_grid[0]);
    const double gap = std::abs(std::log(rep.best_argmin_k / *epsilon));
    rep.pass = gap <= cell * (1.0 + 1e-9);
    rep.detail = "argmin k = " + format_real(rep.best_argmin_k) + ", epsilon = " +
                 format_real(*epsilon);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Zero-task-gradient decay: the regularizer alone acts on a WN group.

/// Norm after each of `steps` plain-SGD updates driven only by the
/// regularizer gradient (index 0 is the initial norm).
inline Vec zero_task_decay(const WeightGroup& start, const RegularizerSpec& reg, double eta,
                           std::size_t steps) {
  WeightGroup g = start;
  Optimizer opt(OptimizerSpec::sgd(eta));
  Vec norms{norm2(g.w)};
  for (std::size_t t = 0; t < steps; ++t) {
    opt.step(g, reg_grad(g, reg), t);
    norms.push_back(norm2(g.w));
  }
  return norms;
}

// ---------------------------------------------------------------------------
// Stress test: push group norms toward zero and watch 1/||w||.

struct StressConfig {
  std::vector<LayerSpec> layers;
  Activation activation = Activation::ReLU;
  std::vector<OptimizerSpec> optimizers;
  std::vector<double> lambdas;
  std::optional<double> epsilon;  // adds EpsShiftedL2 rows when set
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  double burn_in_fraction = 0.1;
};

struct StressRow {
  std::string optimizer;
  double lambda = 0.0;
  std::string regularizer;  // "l2" or "eps"
  double epsilon = 0.0;
  std::optional<std::size_t> first_overflow_step;
  std::string overflow_group;
  std::size_t steps_completed = 0;
  double initial_recip = 0.0;
  double max_recip = 0.0;
  double max_recip_after_burn_in = 0.0;
  double recip_growth = 0.0;  // max_recip / initial_recip
  double final_min_norm = 0.0;
  Vec min_norm;    // per step, index 0 = init
  Vec max_eff_lr;
  Vec max_recip_trajectory;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"optimizer", optimizer},
                        {"lambda", lambda},
                        {"regularizer", regularizer},
                        {"epsilon", epsilon},
                        {"steps_completed", steps_completed},
                        {"overflow_group", overflow_group},
                        {"initial_recip", detail::real_json(initial_recip)},
                        {"max_recip", detail::real_json(max_recip)},
                        {"max_recip_after_burn_in", detail::real_json(max_recip_after_burn_in)},
                        {"recip_growth", detail::real_json(recip_growth)},
                        {"final_min_norm", detail::real_json(final_min_norm)},
                        {"min_norm", detail::real_array(min_norm)},
                        {"max_eff_lr", detail::real_array(max_eff_lr)},
                        {"max_recip", detail::real_array(max_recip_trajectory)}};
    j["first_overflow_step"] =
        first_overflow_step ? nlohmann::json(*first_overflow_step) : nlohmann::json(nullptr);
    j["max_recip_scalar"] = detail::real_json(max_recip);
    return j;
  }
};

struct StressReport {
  std::size_t steps = 0;
  std::size_t burn_in = 0;
  std::vector<StressRow> rows;

  const StressRow* find(const std::string& optimizer, const std::string& regularizer,
                        double lambda) const {
    for (const auto& r : rows) {
      if (r.optimizer == optimizer && r.regularizer == regularizer && r.lambda == lambda) return &r;
    }
    return nullptr;
  }

  nlohmann::json to_json() const {
    auto rs = nlohmann::json::array();
    for (const auto& r : rows) rs.push_back(r.to_json());
    return {{"steps", steps}, {"burn_in", burn_in}, {"rows", rs}};
  }
};

inline StressRow stress_cell(const StressConfig& cfg, const Batch& data, const OptimizerSpec& opt,
                             double lambda, RegularizerType reg, double epsilon) {
  TrainConfig tc;
  tc.layers = with_regularizer(cfg.layers, reg, lambda, epsilon);
  tc.activation = cfg.activation;
  tc.optimizer = opt;
  tc.steps = cfg.steps;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  tc.telemetry = false;
  TrainResult res = train(tc, data);

  StressRow row;
  row.optimizer = to_string(opt.kind);
  row.lambda = lambda;
  row.regularizer = reg == RegularizerType::EpsShiftedL2 ? "eps" : "l2";
  row.epsilon = reg == RegularizerType::EpsShiftedL2 ? epsilon : 0.0;
  if (res.outcome.status == RunStatus::Overflowed) {
    row.first_overflow_step = res.outcome.step;
    row.overflow_group = res.overflow_group;
  }
  row.steps_completed = res.steps_completed;
  row.initial_recip = res.max_recip.front();
  const std::size_t burn_in =
      static_cast<std::size_t>(cfg.burn_in_fraction * static_cast<double>(cfg.steps));
  for (std::size_t s = 0; s < res.max_recip.size(); ++s) {
    row.max_recip = std::max(row.max_recip, res.max_recip[s]);
    if (s >= burn_in) row.max_recip_after_burn_in = std::max(row.max_recip_after_burn_in, res.max_recip[s]);
  }
  if (row.first_overflow_step) {
    row.max_recip = std::numeric_limits<double>::infinity();
    row.max_recip_after_burn_in = std::numeric_limits<double>::infinity();
  }
  row.recip_growth = row.max_recip / row.initial_recip;
  row.final_min_norm = res.min_norm.back();
  row.min_norm = std::move(res.min_norm);
  row.max_eff_lr = std::move(res.max_eff_lr);
  row.max_recip_trajectory = std::move(res.max_recip);
  return row;
}

/// Every (regularizer, optimizer, lambda) cell runs to completion or overflow;
/// overflow is recorded per row and never aborts the sweep.
inline StressReport run_stress(const StressConfig& cfg, const Batch& data) {
  if (cfg.optimizers.empty() || cfg.lambdas.empty()) throw ConfigError("stress grids must be nonempty");
  StressReport rep;
  rep.steps = cfg.steps;
  rep.burn_in = static_cast<std::size_t>(cfg.burn_in_fraction * static_cast<double>(cfg.steps));
  std::vector<RegularizerType> regs{RegularizerType::L2};
  if (cfg.epsilon) regs.push_back(RegularizerType::EpsShiftedL2);
  for (auto reg : regs)
    for (const auto& opt : cfg.optimizers)
      for (double lambda : cfg.lambdas)
        rep.rows.push_back(stress_cell(cfg, data, opt, lambda, reg, cfg.epsilon.value_or(0.0)));
  return rep;
}

/// Desk-scale instance used for the instability reproduction: 2-32-3 WN MLP
/// with biases on 3-class blobs. Adam runs with beta1 = 0.5; its momentum
/// contracts a dead unit by sqrt(beta1) per step, fast enough for the norm to
/// underflow inside T = 2000 (with beta1 = 0.9 it only reaches ~1e-45).
inline StressConfig reference_stress_config() {
  StressConfig c;
  c.layers = mlp_layers({2, 32, 3}, ReparamKind::wn(), ReparamKind::wn());
  c.optimizers = {OptimizerSpec::sgd(0.1), OptimizerSpec::adam(0.15, 0.5)};
  c.lambdas = {0.3};
  c.epsilon = 2.0;
  c.steps = 2000;
  c.batch_size = 32;
  c.seed = 7;
  return c;
}

// ---------------------------------------------------------------------------
// Lambda / epsilon sweep.

struct SweepConfig {
  std::vector<LayerSpec> layers;
  Activation activation = Activation::ReLU;
  OptimizerSpec optimizer;
  std::vector<double> lambdas;
  std::vector<double> epsilons;  // 0 means plain L2
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
};

struct SweepCell {
  double lambda = 0.0;
  double epsilon = 0.0;
  bool overflowed = false;
  std::size_t overflow_step = 0;
  double train_acc = 0.0;
  double validation_acc = 0.0;

  friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

inline std::vector<SweepCell> run_sweep(const SweepConfig& cfg, const Dataset& data) {
  if (cfg.lambdas.empty() || cfg.epsilons.empty()) throw ConfigError("sweep grids must be nonempty");
  std::vector<SweepCell> cells;
  for (double eps : cfg.epsilons) {
    for (double lambda : cfg.lambdas) {
      TrainConfig tc;
      tc.layers = with_regularizer(cfg.layers,
                                   eps > 0.0 ? RegularizerType::EpsShiftedL2 : RegularizerType::L2,
                                   lambda, eps);
      tc.activation = cfg.activation;
      tc.optimizer = cfg.optimizer;
      tc.steps = cfg.steps;
      tc.batch_size = cfg.batch_size;
      tc.seed = cfg.seed;
      tc.telemetry = false;
      const TrainResult res = train(tc, data.train, &data.validation);
      SweepCell c;
      c.lambda = lambda;
      c.epsilon = eps;
      c.overflowed = res.outcome.status == RunStatus::Overflowed;
      c.overflow_step = c.overflowed ? res.outcome.step : 0;
      c.train_acc = res.train_acc;
      c.validation_acc = res.validation_acc;
      cells.push_back(c);
    }
  }
  return cells;
}

/// Accuracy table; overflowed cells show "--".
inline std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::string out = "lambda,epsilon,train_acc,validation_acc\n";
  for (const auto& c : cells) {
    out += format_real(c.lambda) + ',' + format_real(c.epsilon) + ',';
    if (c.overflowed) {
      out += "--,--\n";
    } else {
      out += format_real(c.train_acc) + ',' + format_real(c.validation_acc) + '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

/// Relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-12) {
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(diff) / std::max({norm2(a), norm2(b), floor});
}

/// Analytic and central-difference gradients of the mean loss over every
/// weight and bias, flattened in layer order.
inline std::pair<Vec, Vec> network_gradients_vs_fd(Network net, const Batch& batch,
                                                   double h = 1e-6) {
  const NetworkGradients g = backward(net, forward_loss(net, batch).cache);
  Vec analytic, numeric;
  auto fd = [&](double& x) {
    const double x0 = x;
    x = x0 + h;
    const double up = forward_loss(net, batch).loss;
    x = x0 - h;
    const double down = forward_loss(net, batch).loss;
    x = x0;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    for (std::size_t r = 0; r < layer.groups.size(); ++r) {
      for (std::size_t i = 0; i < layer.groups[r].w.size(); ++i) {
        analytic.push_back(g.weights[l][r][i]);
        numeric.push_back(fd(layer.groups[r].w[i]));
      }
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      analytic.push_back(g.bias[l][i]);
      numeric.push_back(fd(layer.bias[i]));
    }
  }
  return {analytic, numeric};
}

struct GradcheckSummary {
  std::string label;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool pass() const { return failures == 0; }

  nlohmann::json to_json() const {
    return {{"label", label},
            {"trials", trials},
            {"failures", failures},
            {"max_rel_error", detail::real_json(max_rel_error)},
            {"tolerance", tolerance},
            {"verdict", pass() ? "pass" : "fail"}};
  }
};

/// Random 2-16-3 networks of the given kind on 8 random examples.
inline GradcheckSummary gradcheck_network(ReparamKind kind, BackwardVariant variant,
                                          std::size_t trials, std::uint64_t seed,
                                          double tolerance = 1e-5) {
  GradcheckSummary s;
  s.label = to_string(kind) + "/" + to_string(variant);
  s.trials = trials;
  s.tolerance = tolerance;
  const auto layers = mlp_layers({2, 16, 3}, kind, kind, true, variant);
  for (std::size_t t = 0; t < trials; ++t) {
    RngStream rng = RngStream(seed).fork(t);
    Network net = Network::build(layers, rng);
    for (auto& l : net.layers)
      for (double& b : l.bias) b = rng.normal(0.0, 0.1);
    Batch batch;
    batch.inputs = Mat(8, 2);
    for (double& x : batch.inputs.values) x = rng.normal();
    for (std::size_t i = 0; i < 8; ++i) batch.labels.push_back(rng.index(3));
    const auto [a, n] = network_gradients_vs_fd(net, batch);
    const double err = relative_error(a, n);
    s.max_rel_error = std::max(s.max_rel_error, err);
    if (!(err < tolerance)) ++s.failures;
  }
  return s;
}

/// Regularizer gradients against central differences of reg_value on random
/// groups of sizes 3 and 10.
inline GradcheckSummary gradcheck_regularizer(const RegularizerSpec& spec, ReparamKind kind,
                                              std::size_t trials, std::uint64_t seed,
                                              double tolerance = 1e-7, double h = 1e-6) {
  GradcheckSummary s;
  s.label = to_string(spec) + "@" + to_string(kind);
  s.trials = trials;
  s.tolerance = tolerance;
  for (std::size_t t = 0; t < trials; ++t) {
    RngStream rng = RngStream(seed).fork(t);
    const std::size_t n = t % 2 == 0 ? 3 : 10;
    WeightGroup g{Vec(n), kind, "reg"};
    for (double& x : g.w) x = rng.uniform(-2.0, 2.0);
    const Vec a = reg_grad(g, spec);
    Vec num(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = g.w[i];
      g.w[i] = x0 + h;
      const double up = reg_value(g, spec);
      g.w[i] = x0 - h;
      const double down = reg_value(g, spec);
      g.w[i] = x0;
      num[i] = (up - down) / (2.0 * h);
    }
    const double err = relative_error(a, num);
    s.max_rel_error = std::max(s.max_rel_error, err);
    if (!(err < tolerance)) ++s.failures;
  }
  return s;
}

}  // namespace normlab
