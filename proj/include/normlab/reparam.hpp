#pragma once

// Weight-normalization family: the map from a trainable group W to the
// effective weight W' that the network actually uses, plus its backward.
//
//   Identity  W' = W
//   WN        W' = W / ||W||
//   CWN       W' = (W - mean) / ||W - mean||
//   WS(eps)   W' = (W - mean) / (std + eps)      (population std, divisor n)
//
// The learnable length g of the original formulations is omitted throughout.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "normlab/errors.hpp"
#include "normlab/linalg.hpp"

namespace normlab {

enum class ReparamType { Identity, WN, CWN, WS };

struct ReparamKind {
  ReparamType type = ReparamType::Identity;
  double eps_denom = 0.0;  // WS only

  static ReparamKind identity() { return {ReparamType::Identity, 0.0}; }
  static ReparamKind wn() { return {ReparamType::WN, 0.0}; }
  static ReparamKind cwn() { return {ReparamType::CWN, 0.0}; }
  static ReparamKind ws(double eps_denom = 0.0) {
    if (!(eps_denom >= 0.0)) throw ConfigError("WS eps_denom must be >= 0");
    return {ReparamType::WS, eps_denom};
  }

  bool normalized() const { return type != ReparamType::Identity; }

  /// Invariant to w -> c*w for every c > 0.
  bool scale_invariant() const {
    return type == ReparamType::WN || type == ReparamType::CWN ||
           (type == ReparamType::WS && eps_denom == 0.0);
  }

  friend bool operator==(const ReparamKind&, const ReparamKind&) = default;
};

inline std::string to_string(const ReparamKind& k) {
  switch (k.type) {
    case ReparamType::Identity: return "identity";
    case ReparamType::WN: return "wn";
    case ReparamType::CWN: return "cwn";
    case ReparamType::WS: {
      if (k.eps_denom == 0.0) return "ws";
      char buf[64];
      std::snprintf(buf, sizeof buf, "ws:%.17g", k.eps_denom);
      return buf;
    }
  }
  return "?";
}

/// Accepts "identity", "wn", "cwn", "ws" and "ws:<eps_denom>".
inline ReparamKind parse_reparam_kind(std::string_view s) {
  if (s == "identity" || s == "none") return ReparamKind::identity();
  if (s == "wn") return ReparamKind::wn();
  if (s == "cwn") return ReparamKind::cwn();
  if (s == "ws") return ReparamKind::ws();
  if (s.starts_with("ws:")) {
    const std::string tail(s.substr(3));
    char* end = nullptr;
    const double eps = std::strtod(tail.c_str(), &end);
    if (tail.empty() || end != tail.c_str() + tail.size()) {
      throw ConfigError("bad WS epsilon in reparam kind '" + std::string(s) + "'");
    }
    return ReparamKind::ws(eps);
  }
  throw ConfigError("unknown reparam kind '" + std::string(s) + "'");
}

enum class BackwardVariant {
  Exact,     // full Jacobian-transpose product
  Diagonal,  // elementwise product with the Jacobian diagonal (WN, WS only)
};

inline std::string to_string(BackwardVariant v) {
  return v == BackwardVariant::Exact ? "exact" : "diagonal";
}

inline BackwardVariant parse_backward_variant(std::string_view s) {
  if (s == "exact") return BackwardVariant::Exact;
  if (s == "diagonal") return BackwardVariant::Diagonal;
  throw ConfigError("unknown backward variant '" + std::string(s) + "'");
}

inline bool variant_supported(const ReparamKind& kind, BackwardVariant v) {
  if (v == BackwardVariant::Exact) return true;
  return kind.type == ReparamType::WN || kind.type == ReparamType::WS;
}

struct WeightGroup {
  Vec w;
  ReparamKind kind;
  std::string id;

  std::size_t size() const { return w.size(); }
};

namespace detail {

inline double checked_norm(const WeightGroup& g, std::span<const double> v,
                           const char* what) {
  const double k = norm2(v);
  if (!(k > 0.0) || !std::isfinite(k)) {
    throw DegenerateWeightError(g.id, std::string(what) + " is " + std::to_string(k));
  }
  return k;
}

inline Vec centered(std::span<const double> w, double m) {
  Vec c(w.begin(), w.end());
  for (double& x : c) x -= m;
  return c;
}

}  // namespace detail

/// Effective weight W' for the group.
inline Vec forward(const WeightGroup& g) {
  if (g.w.empty()) throw DimensionError("forward: empty group '" + g.id + "'");
  switch (g.kind.type) {
    case ReparamType::Identity:
      return g.w;
    case ReparamType::WN: {
      const double k = detail::checked_norm(g, g.w, "norm");
      return scaled(g.w, 1.0 / k);
    }
    case ReparamType::CWN: {
      const Vec c = detail::centered(g.w, mean(g.w));
      const double r = detail::checked_norm(g, c, "centered norm");
      return scaled(c, 1.0 / r);
    }
    case ReparamType::WS: {
      const auto [m, v] = mean_std(g.w);
      if (g.kind.eps_denom == 0.0 && !(v > 0.0)) {
        throw DegenerateWeightError(g.id, "standard deviation is " + std::to_string(v));
      }
      if (!std::isfinite(v)) throw DegenerateWeightError(g.id, "non-finite std");
      return scaled(detail::centered(g.w, m), 1.0 / (v + g.kind.eps_denom));
    }
  }
  return g.w;
}

/// Gradient with respect to W given the gradient with respect to W'.
inline Vec backward(const WeightGroup& g, std::span<const double> grad_out,
                    BackwardVariant variant = BackwardVariant::Exact) {
  require_same_length(g.w.size(), grad_out.size(), "backward");
  if (!variant_supported(g.kind, variant)) {
    throw UnsupportedVariantError(to_string(variant) + " backward is not defined for " +
                                  to_string(g.kind) + " (group '" + g.id + "')");
  }
  const std::size_t n = g.w.size();
  const auto nd = static_cast<double>(n);
  Vec out(n);

  switch (g.kind.type) {
    case ReparamType::Identity:
      out.assign(grad_out.begin(), grad_out.end());
      return out;

    case ReparamType::WN: {
      const double k = detail::checked_norm(g, g.w, "norm");
      if (variant == BackwardVariant::Diagonal) {
        const double k3 = k * k * k;
        for (std::size_t i = 0; i < n; ++i) {
          out[i] = grad_out[i] * (1.0 / k - g.w[i] * g.w[i] / k3);
        }
        return out;
      }
      // (I - A A^T) grad_out / k
      const Vec a = scaled(g.w, 1.0 / k);
      const double ag = dot(a, grad_out);
      for (std::size_t i = 0; i < n; ++i) out[i] = (grad_out[i] - a[i] * ag) / k;
      return out;
    }

    case ReparamType::CWN: {
      const Vec c = detail::centered(g.w, mean(g.w));
      const double r = detail::checked_norm(g, c, "centered norm");
      const Vec y = scaled(c, 1.0 / r);
      const double gm = mean(grad_out);
      // y is already centered, so re-centering only touches grad_out.
      const double yg = dot(y, grad_out);
      for (std::size_t i = 0; i < n; ++i) out[i] = (grad_out[i] - gm - y[i] * yg) / r;
      return out;
    }

    case ReparamType::WS: {
      const double eps = g.kind.eps_denom;
      const auto [m, v] = mean_std(g.w);
      if (eps == 0.0 && !(v > 0.0)) {
        throw DegenerateWeightError(g.id, "standard deviation is " + std::to_string(v));
      }
      const double s = v + eps;
      const Vec c = detail::centered(g.w, m);
      if (variant == BackwardVariant::Diagonal) {
        for (std::size_t i = 0; i < n; ++i) {
          const double radial = v > 0.0 ? c[i] * c[i] / (nd * s * v) : 0.0;
          out[i] = grad_out[i] * (1.0 - 1.0 / nd - radial) / s;
        }
        return out;
      }
      const double gm = mean(grad_out);
      if (!(v > 0.0)) {
        // eps > 0 and a constant group: std is not differentiable here, keep
        // the centering part only.
        for (std::size_t i = 0; i < n; ++i) out[i] = (grad_out[i] - gm) / s;
        return out;
      }
      const Vec b = scaled(c, 1.0 / v);
      const double coeff = dot(b, grad_out) * (v / s) / nd;
      for (std::size_t i = 0; i < n; ++i) out[i] = (grad_out[i] - gm - b[i] * coeff) / s;
      return out;
    }
  }
  return out;
}

inline constexpr std::size_t kDefaultMinGroupSize = 8;

/// Warning text when a normalized group is too small to keep useful degrees
/// of freedom; never blocks.
inline std::optional<std::string> validate_group_size(
    std::size_t n, const ReparamKind& kind, std::size_t threshold = kDefaultMinGroupSize) {
  if (!kind.normalized() || n >= threshold) return std::nullopt;
  return to_string(kind) + " applied to a group of " + std::to_string(n) +
         " parameters (< " + std::to_string(threshold) +
         "); normalization removes most of its degrees of freedom";
}

}  // namespace normlab
