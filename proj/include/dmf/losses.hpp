#pragma once

#include <cmath>
#include <string>

#include "dmf/tensor.hpp"

namespace dmf {

enum class LossKind { MSE, Adaptive, Cauchy };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::MSE:
      return "mse";
    case LossKind::Adaptive:
      return "adaptive";
    case LossKind::Cauchy:
      return "cauchy";
  }
  return "?";
}

/// Regression loss on the per-row error e2_b = mean_j (pred - target)^2:
///   MSE       e2
///   Adaptive  w e2 with w = (e2 + c)^-p held constant (no gradient)
///   Cauchy    c^2 log(1 + e2 / c^2)
struct LossConfig {
  LossKind kind = LossKind::MSE;
  double p = 0.75;
  double c = 1e-3;

  void validate() const {
    if (!(p > 0.0 && p <= 1.5)) throw DomainError("loss: norm_p must lie in (0, 1.5]");
    if (!(c > 0.0)) throw DomainError("loss: c must be > 0");
  }
};

struct LossResult {
  double value = 0.0;
  Tensor per_sample;
  Tensor grad;  // d value / d pred, same shape as pred
};

inline double adaptive_weight(double e2, double p, double c) { return std::pow(e2 + c, -p); }

inline double cauchy_loss(double e2, double c) { return c * c * std::log1p(e2 / (c * c)); }

/// d cauchy / d e2 = 1 / (1 + e2 / c^2).
inline double cauchy_slope(double e2, double c) { return 1.0 / (1.0 + e2 / (c * c)); }

inline LossResult loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  const std::size_t batch = pred.rows(), d = pred.cols();
  std::string bad;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(pred.at(b, j)) || !std::isfinite(target.at(b, j))) {
        if (bad.size() < 200) bad += (bad.empty() ? "" : ",") + std::to_string(b);
        break;
      }
    }
  }
  if (!bad.empty()) throw NonFiniteError("loss: non-finite values in rows " + bad);

  LossResult out{0.0, Tensor({batch}), Tensor(pred.shape())};
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t b = 0; b < batch; ++b) {
    double e2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = pred.at(b, j) - target.at(b, j);
      e2 += r * r;
    }
    e2 *= inv_d;
    double value = e2, slope = 1.0;
    switch (cfg.kind) {
      case LossKind::MSE:
        break;
      case LossKind::Adaptive:
        slope = adaptive_weight(e2, cfg.p, cfg.c);
        value = slope * e2;
        break;
      case LossKind::Cauchy:
        value = cauchy_loss(e2, cfg.c);
        slope = cauchy_slope(e2, cfg.c);
        break;
    }
    out.per_sample[b] = value;
    out.value += value * inv_b;
    const double g = slope * 2.0 * inv_d * inv_b;
    for (std::size_t j = 0; j < d; ++j) out.grad.at(b, j) = g * (pred.at(b, j) - target.at(b, j));
  }
  return out;
}

}  // namespace dmf
