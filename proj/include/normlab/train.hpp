#pragma once

// Seeded minibatch training loop shared by `train`, the stress test and the sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/model.hpp"
#include "normlab/optimize.hpp"
#include "normlab/telemetry.hpp"

namespace normlab {

/// Epoch-wise shuffled minibatches; the sequence depends only on the seed.
class BatchSampler {
 public:
  BatchSampler(const Batch& data, std::size_t batch_size, std::uint64_t seed)
      : data_(&data), batch_size_(std::max<std::size_t>(1, batch_size)), rng_(seed) {
    order_.resize(data.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    pos_ = order_.size();
  }

  Batch next() {
    const std::size_t n = order_.size();
    const std::size_t take = std::min(batch_size_, n);
    Batch b;
    b.inputs = Mat(take, data_->inputs.cols);
    for (std::size_t k = 0; k < take; ++k) {
      if (pos_ >= n) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      const std::size_t i = order_[pos_++];
      const auto src = data_->inputs.row(i);
      std::copy(src.begin(), src.end(), b.inputs.row(k).begin());
      b.labels.push_back(data_->labels[i]);
    }
    return b;
  }

 private:
  const Batch* data_;
  std::size_t batch_size_;
  RngStream rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_;
};

struct TrainConfig {
  std::vector<LayerSpec> layers;
  Activation activation = Activation::ReLU;
  OptimizerSpec optimizer;
  LrSchedule schedule;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  std::size_t record_every = 1;
  bool telemetry = true;
  std::size_t min_group_size = kDefaultMinGroupSize;
};

struct TrainResult {
  Network net;
  RunOutcome outcome;
  std::string overflow_group;  // set when outcome is Overflowed
  std::size_t steps_completed = 0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  double train_acc = 0.0;       // full train split, final weights
  double validation_acc = 0.0;  // empty validation -> 0
  // Index 0 holds the initial state, index s the state after s updates.
  std::vector<double> min_norm;
  std::vector<double> max_eff_lr;
  std::vector<double> max_recip;
  TelemetryRecorder telemetry;
};

namespace detail {

struct GroupSummary {
  double min_norm = std::numeric_limits<double>::infinity();
  double max_eff_lr = 0.0;
  double max_recip = 0.0;
};

inline GroupSummary summarize(const Network& net, double eta_t) {
  GroupSummary s;
  net.for_each_group([&](const WeightGroup& g) {
    s.min_norm = std::min(s.min_norm, norm2(g.w));
    if (!g.kind.normalized()) return;
    const double recip = reciprocal_magnitude(g);
    const double r = std::isnan(recip) ? std::numeric_limits<double>::infinity() : recip;
    s.max_recip = std::max(s.max_recip, r);
    s.max_eff_lr = std::max(s.max_eff_lr, eta_t * r);
  });
  return s;
}

inline double accuracy_or_zero(const Network& net, const Batch& b) {
  if (b.size() == 0) return 0.0;
  try {
    return forward_loss(net, b).accuracy;
  } catch (const DegenerateWeightError&) {
    return 0.0;
  }
}

}  // namespace detail

/// Runs `cfg.steps` SGD-family updates on minibatches of `train`. Overflow
/// (non-finite gradients, weights or moments, or a group norm collapsing to
/// zero so that 1/||w|| is infinite) ends the run early; it is reported in
/// the outcome, not thrown.
inline TrainResult train(const TrainConfig& cfg, const Batch& train_set,
                         const Batch* validation = nullptr) {
  RngStream init_rng = RngStream(cfg.seed).fork(1);
  TrainResult res;
  res.net = Network::build(cfg.layers, init_rng, cfg.activation, cfg.min_group_size);
  res.telemetry = TelemetryRecorder(cfg.record_every);
  Network& net = res.net;
  Optimizer opt(cfg.optimizer);
  BatchSampler sampler(train_set, cfg.batch_size, RngStream(cfg.seed).fork(2).next_u64());

  auto push_summary = [&](double eta_t) {
    const auto s = detail::summarize(net, eta_t);
    res.min_norm.push_back(s.min_norm);
    res.max_eff_lr.push_back(s.max_eff_lr);
    res.max_recip.push_back(s.max_recip);
  };
  push_summary(cfg.optimizer.eta * cfg.schedule.multiplier(0));

  auto overflow = [&](std::size_t step, const std::string& group_id, double loss, double acc) {
    res.outcome = {RunStatus::Overflowed, step};
    res.overflow_group = group_id;
    if (cfg.telemetry && !res.telemetry.terminated()) {
      const WeightGroup* hit = nullptr;
      net.for_each_group([&](const WeightGroup& g) {
        if (g.id == group_id) hit = &g;
      });
      if (hit) {
        res.telemetry.record_overflow(step, *hit, loss, acc);
        return;
      }
      for (const auto& layer : net.layers) {
        if (layer.bias_id == group_id) {
          res.telemetry.record_overflow(step, {layer.bias, ReparamKind::identity(), group_id},
                                        loss, acc);
        }
      }
    }
  };

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const std::size_t step = t + 1;
    const Batch batch = sampler.next();
    LossEval eval;
    try {
      eval = forward_loss(net, batch);
    } catch (const DegenerateWeightError& e) {
      overflow(step, e.group_id(), res.last_loss, 0.0);
      break;
    }
    res.last_loss = eval.loss;
    if (!std::isfinite(eval.loss)) {
      res.outcome = {RunStatus::Diverged, step};
      break;
    }
    NetworkGradients grads;
    try {
      grads = backward(net, eval.cache);
      add_regularizer_grads(net, grads);
    } catch (const DegenerateWeightError& e) {
      overflow(step, e.group_id(), eval.loss, eval.accuracy);
      break;
    }

    const double eta_t = cfg.optimizer.eta * cfg.schedule.multiplier(t);
    try {
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Layer& layer = net.layers[l];
        for (std::size_t r = 0; r < layer.groups.size(); ++r) {
          opt.step(layer.groups[r], grads.weights[l][r], t, cfg.schedule);
        }
        if (!layer.bias.empty()) {
          opt.step(layer.bias, grads.bias[l], layer.bias_id, t, cfg.schedule);
        }
      }
    } catch (const OverflowError& e) {
      overflow(step, e.group_id(), eval.loss, eval.accuracy);
      break;
    }

    res.steps_completed = step;
    push_summary(eta_t);
    if (cfg.telemetry) {
      net.for_each_group([&](const WeightGroup& g) {
        if (!res.telemetry.terminated()) {
          res.telemetry.record_step(step, g, eta_t, eval.loss, eval.accuracy);
        }
      });
    }
  }
  res.train_acc = detail::accuracy_or_zero(net, train_set);
  if (validation) res.validation_acc = detail::accuracy_or_zero(net, *validation);
  return res;
}

}  // namespace normlab
