#pragma once

// Fully connected network whose weight matrices are normalized row by row,
// one WeightGroup per output unit. Loss is softmax cross entropy averaged
// over the batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"
#include "normlab/regularize.hpp"
#include "normlab/reparam.hpp"

namespace normlab {

enum class Activation { ReLU, Identity };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  ReparamKind kind;
  BackwardVariant backward_variant = BackwardVariant::Exact;
  RegularizerSpec regularizer;  // weights only; biases are never regularized
  bool has_bias = true;
};

struct Layer {
  LayerSpec spec;
  std::vector<WeightGroup> groups;  // one per output unit
  Vec bias;                         // empty when !spec.has_bias
  std::vector<std::string> warnings;
  std::string bias_id;

  /// Effective weight matrix W' (out_dim x in_dim).
  Mat effective() const {
    Mat m(spec.out_dim, spec.in_dim);
    for (std::size_t r = 0; r < groups.size(); ++r) {
      const Vec row = forward(groups[r]);
      std::copy(row.begin(), row.end(), m.row(r).begin());
    }
    return m;
  }
};

struct Batch {
  Mat inputs;                       // examples x features
  std::vector<std::size_t> labels;  // class indices

  std::size_t size() const { return labels.size(); }
};

struct Network {
  std::vector<Layer> layers;
  Activation activation = Activation::ReLU;  // between layers, never after the last

  /// Weights drawn with He fan_out initialization, biases start at zero.
  static Network build(const std::vector<LayerSpec>& specs, RngStream& rng,
                       Activation activation = Activation::ReLU,
                       std::size_t min_group_size = kDefaultMinGroupSize) {
    if (specs.empty()) throw ConfigError("network needs at least one layer");
    Network net;
    net.activation = activation;
    for (std::size_t l = 0; l < specs.size(); ++l) {
      const LayerSpec& s = specs[l];
      if (s.in_dim == 0 || s.out_dim == 0) throw ConfigError("layer dimensions must be >= 1");
      if (l > 0 && specs[l - 1].out_dim != s.in_dim) {
        throw ConfigError("layer " + std::to_string(l) + " input dimension " +
                          std::to_string(s.in_dim) + " does not match previous output " +
                          std::to_string(specs[l - 1].out_dim));
      }
      if (!variant_supported(s.kind, s.backward_variant)) {
        throw UnsupportedVariantError(to_string(s.backward_variant) +
                                      " backward is not defined for " + to_string(s.kind));
      }
      Layer layer;
      layer.spec = s;
      const Mat w = he_fanout_init(s.out_dim, s.in_dim, rng);
      for (std::size_t r = 0; r < s.out_dim; ++r) {
        const auto row = w.row(r);
        layer.groups.push_back(
            {Vec(row.begin(), row.end()), s.kind,
             "L" + std::to_string(l) + ".r" + std::to_string(r)});
      }
      if (s.has_bias) layer.bias.assign(s.out_dim, 0.0);
      layer.bias_id = "L" + std::to_string(l) + ".bias";
      if (auto warn = validate_group_size(s.in_dim, s.kind, min_group_size)) {
        layer.warnings.push_back("layer " + std::to_string(l) + ": " + *warn);
      }
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

  std::size_t input_dim() const { return layers.front().spec.in_dim; }
  std::size_t num_classes() const { return layers.back().spec.out_dim; }

  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    for (const auto& l : layers) out.insert(out.end(), l.warnings.begin(), l.warnings.end());
    return out;
  }

  std::size_t num_groups() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.groups.size();
    return n;
  }

  template <class F>
  void for_each_group(F&& f) const {
    for (const auto& l : layers)
      for (const auto& g : l.groups) f(g);
  }

  template <class F>
  void for_each_group(F&& f) {
    for (auto& l : layers)
      for (auto& g : l.groups) f(g);
  }
};

struct ForwardCache {
  std::vector<Mat> effective;  // W' per layer
  std::vector<Mat> inputs;     // input to each layer
  std::vector<Mat> pre;        // pre-activation output of each layer
  Mat probs;                   // softmax of the final logits
  std::vector<std::size_t> labels;
};

struct LossEval {
  double loss = 0.0;
  double accuracy = 0.0;
  ForwardCache cache;
};

inline LossEval forward_loss(const Network& net, const Batch& batch) {
  const std::size_t n = batch.size();
  if (n == 0) throw DimensionError("forward_loss: empty batch");
  if (batch.inputs.rows != n) throw DimensionError("forward_loss: inputs/labels mismatch");
  if (batch.inputs.cols != net.input_dim()) {
    throw DimensionError("forward_loss: batch has " + std::to_string(batch.inputs.cols) +
                         " features, network expects " + std::to_string(net.input_dim()));
  }
  LossEval out;
  ForwardCache& cache = out.cache;
  cache.labels = batch.labels;
  Mat h = batch.inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    Mat wp = layer.effective();
    Mat z(n, layer.spec.out_dim);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o = 0; o < layer.spec.out_dim; ++o) {
        double s = layer.bias.empty() ? 0.0 : layer.bias[o];
        s += dot(h.row(b), wp.row(o));
        z(b, o) = s;
      }
    }
    cache.inputs.push_back(std::move(h));
    cache.effective.push_back(std::move(wp));
    h = z;
    const bool last = l + 1 == net.layers.size();
    if (!last && net.activation == Activation::ReLU) {
      for (double& x : h.values) x = std::max(x, 0.0);
    }
    cache.pre.push_back(std::move(z));
  }

  const std::size_t classes = net.num_classes();
  cache.probs = Mat(n, classes);
  double total = 0.0;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t y = batch.labels[b];
    if (y >= classes) {
      throw DimensionError("label " + std::to_string(y) + " out of range for " +
                           std::to_string(classes) + " classes");
    }
    const auto logits = h.row(b);
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      cache.probs(b, c) = std::exp(logits[c] - zmax);
      sum += cache.probs(b, c);
    }
    for (std::size_t c = 0; c < classes; ++c) cache.probs(b, c) /= sum;
    total += std::log(sum) - (logits[y] - zmax);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    if (static_cast<std::size_t>(best) == y) ++correct;
  }
  out.loss = total / static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

struct NetworkGradients {
  std::vector<std::vector<Vec>> weights;  // [layer][row], with respect to W (not W')
  std::vector<Vec> bias;                  // [layer], empty for bias-free layers
};

/// Task gradient of the mean cross entropy for every group and bias.
inline NetworkGradients backward(const Network& net, const ForwardCache& cache) {
  const std::size_t L = net.layers.size();
  const std::size_t n = cache.labels.size();
  NetworkGradients grads;
  grads.weights.resize(L);
  grads.bias.resize(L);

  Mat dz = cache.probs;
  for (std::size_t b = 0; b < n; ++b) dz(b, cache.labels[b]) -= 1.0;
  for (double& x : dz.values) x /= static_cast<double>(n);

  for (std::size_t l = L; l-- > 0;) {
    const Layer& layer = net.layers[l];
    const Mat& in = cache.inputs[l];
    const Mat& wp = cache.effective[l];
    const std::size_t out_dim = layer.spec.out_dim;
    const std::size_t in_dim = layer.spec.in_dim;

    if (layer.spec.has_bias) {
      Vec db(out_dim, 0.0);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) db[o] += dz(b, o);
      grads.bias[l] = std::move(db);
    }

    grads.weights[l].resize(out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
      Vec dwp(in_dim, 0.0);  // d loss / d W'
      for (std::size_t b = 0; b < n; ++b) {
        const double g = dz(b, o);
        if (g == 0.0) continue;
        const auto x = in.row(b);
        for (std::size_t i = 0; i < in_dim; ++i) dwp[i] += g * x[i];
      }
      grads.weights[l][o] = normlab::backward(layer.groups[o], dwp, layer.spec.backward_variant);
    }

    if (l == 0) break;
    Mat dh(n, in_dim);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double g = dz(b, o);
        if (g == 0.0) continue;
        const auto w = wp.row(o);
        for (std::size_t i = 0; i < in_dim; ++i) dh(b, i) += g * w[i];
      }
    }
    if (net.activation == Activation::ReLU) {
      const Mat& pre = cache.pre[l - 1];
      for (std::size_t k = 0; k < dh.values.size(); ++k) {
        if (!(pre.values[k] > 0.0)) dh.values[k] = 0.0;
      }
    }
    dz = std::move(dh);
  }
  return grads;
}

/// Sum of every layer's regularizer over its weight groups.
inline double regularization_value(const Network& net) {
  double total = 0.0;
  for (const auto& l : net.layers)
    for (const auto& g : l.groups) total += reg_value(g, l.spec.regularizer);
  return total;
}

/// Adds each layer's regularizer gradient to the weight gradients (coupled decay).
inline void add_regularizer_grads(const Network& net, NetworkGradients& grads) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    if (layer.spec.regularizer.type == RegularizerType::None) continue;
    for (std::size_t r = 0; r < layer.groups.size(); ++r) {
      const Vec rg = reg_grad(layer.groups[r], layer.spec.regularizer);
      Vec& g = grads.weights[l][r];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += rg[i];
    }
  }
}

/// Step size seen by the normalized weights: eta/||w|| for WN and CWN,
/// eta/std for WS, eta/||w||^c for unnormalized groups.
inline double effective_lr(const WeightGroup& g, double eta_t, double identity_exponent = 1.0) {
  switch (g.kind.type) {
    case ReparamType::WN:
    case ReparamType::CWN:
    case ReparamType::Identity: {
      const double k = norm2(g.w);
      if (!(k > 0.0)) throw DegenerateWeightError(g.id, "norm is zero");
      return g.kind.type == ReparamType::Identity ? eta_t / std::pow(k, identity_exponent)
                                                  : eta_t / k;
    }
    case ReparamType::WS: {
      const double v = mean_std(g.w).std;
      if (!(v > 0.0)) throw DegenerateWeightError(g.id, "standard deviation is zero");
      return eta_t / v;
    }
  }
  return 0.0;
}

}  // namespace normlab
