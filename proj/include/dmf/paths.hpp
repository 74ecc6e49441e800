#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dmf/network.hpp"
#include "dmf/rng.hpp"
#include "dmf/tensor.hpp"

namespace dmf {

/// Lower clamp for any time that is divided by, or mapped through t/(1-t).
inline constexpr double kTimeMin = 1e-5;

/// One batch on the linear path z_t = (1 - t) z0 + t eps.
struct PathSample {
  Tensor z0;
  Tensor eps;
  Tensor t;
  Tensor r;
  Tensor zt;
  Tensor vt;

  std::size_t batch() const { return z0.rows(); }
  std::size_t dim() const { return z0.cols(); }
};

inline Tensor conditional_velocity(const PathSample& sample) { return sub(sample.eps, sample.z0); }

inline PathSample interpolate(Tensor z0, Tensor eps, Tensor t, Tensor r) {
  if (z0.shape() != eps.shape()) throw ShapeError("interpolate: z0 and eps shapes differ");
  if (z0.rank() == 1) {
    z0 = z0.reshaped({1, z0.size()});
    eps = eps.reshaped({1, eps.size()});
  }
  const std::size_t batch = z0.rows(), d = z0.cols();
  if (t.size() != batch || r.size() != batch) throw ShapeError("interpolate: need one (t, r) per row");
  for (std::size_t b = 0; b < batch; ++b) {
    if (r[b] > t[b]) throw DomainError("interpolate: r > t at row " + std::to_string(b));
    if (r[b] < 0.0 || t[b] > 1.0) throw DomainError("interpolate: times must lie in [0, 1]");
  }
  Tensor zt({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < d; ++j) {
      zt.at(b, j) = (1.0 - t[b]) * z0.at(b, j) + t[b] * eps.at(b, j);
    }
  }
  PathSample s{std::move(z0), std::move(eps), std::move(t), std::move(r), std::move(zt), {}};
  s.vt = conditional_velocity(s);
  return s;
}

/// Softmax weights over reference points x_k for one noisy point:
/// w_k ~ exp(-|zt - (1 - t) x_k|^2 / (2 t^2)), computed with max-subtraction.
inline std::vector<double> stable_target_weights(std::span<const double> zt, double t, const Tensor& refs) {
  if (t <= kTimeMin) throw DomainError("stable target undefined at t->0 (t=" + std::to_string(t) + ")");
  if (refs.rank() != 2 || refs.cols() != zt.size()) throw ShapeError("stable_target: refs must be K x d");
  const std::size_t k = refs.rows();
  std::vector<double> logits(k);
  for (std::size_t i = 0; i < k; ++i) {
    double sq = 0.0;
    auto x = refs.row(i);
    for (std::size_t j = 0; j < zt.size(); ++j) {
      const double diff = zt[j] - (1.0 - t) * x[j];
      sq += diff * diff;
    }
    logits[i] = -sq / (2.0 * t * t);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - top);
    total += l;
  }
  for (double& l : logits) l /= total;
  return logits;
}

/// Velocity (zt - xbar) / t where xbar is the softmax-weighted reference mean.
/// Every row of zt is evaluated against the same reference set.
inline Tensor stable_target_velocity(const Tensor& zt, const Tensor& t, const Tensor& refs) {
  const std::size_t batch = zt.rows(), d = zt.cols();
  if (t.size() != batch) throw ShapeError("stable_target: need one t per row");
  Tensor out({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto w = stable_target_weights(zt.row(b), t[b], refs);
    for (std::size_t j = 0; j < d; ++j) {
      double xbar = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) xbar += w[k] * refs.at(k, j);
      out.at(b, j) = (zt.at(b, j) - xbar) / t[b];
    }
  }
  return out;
}

/// Batched stable target: row b uses its own z0 as reference 0 plus `bsub`
/// references drawn uniformly from `pool`. Rows at the t_min clamp take the
/// conditional velocity, which is the t -> 0 limit of the kernel estimate.
inline Tensor stable_target_batch(const PathSample& sample, const Tensor& pool, std::size_t bsub, Rng& rng) {
  const std::size_t batch = sample.batch(), d = sample.dim();
  Tensor out({batch, d});
  Tensor refs({bsub + 1, d});
  for (std::size_t b = 0; b < batch; ++b) {
    if (sample.t[b] <= kTimeMin) {
      std::copy_n(sample.vt.row(b).begin(), d, out.row(b).begin());
      continue;
    }
    std::copy_n(sample.z0.row(b).begin(), d, refs.row(0).begin());
    for (std::size_t k = 1; k <= bsub; ++k) {
      auto src = pool.row(rng.index(pool.rows()));
      std::copy(src.begin(), src.end(), refs.row(k).begin());
    }
    const Tensor one_t = Tensor::vector({sample.t[b]});
    const Tensor zt_row({1, d}, std::vector<double>(sample.zt.row(b).begin(), sample.zt.row(b).end()));
    const Tensor v = stable_target_velocity(zt_row, one_t, refs);
    std::copy_n(v.data().begin(), d, out.row(b).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form flow for standard-normal data and noise. The marginal at time t
// is N(0, sigma(t)^2 I) with sigma(t) = sqrt((1-t)^2 + t^2), the marginal
// velocity is z (2t - 1) / sigma^2, and trajectories are z(s) = z(t) sigma(s) / sigma(t).

inline double oracle_sigma(double t) { return std::sqrt((1.0 - t) * (1.0 - t) + t * t); }

/// Scalar factor a(t) with v(z, t) = a(t) z.
inline double oracle_velocity_factor(double t) {
  const double s = oracle_sigma(t);
  return (2.0 * t - 1.0) / (s * s);
}

/// Scalar factor g(r, t) with u(z, r, t) = g(r, t) z. Uses
/// sigma_t^2 - sigma_r^2 = 2 (t - r)(t + r - 1) so that
/// g = 2 (t + r - 1) / (sigma_t (sigma_t + sigma_r)), free of cancellation as t -> r.
inline double oracle_average_factor(double r, double t) {
  if (t - r < 1e-12) return oracle_velocity_factor(t);
  const double st = oracle_sigma(t), sr = oracle_sigma(r);
  return 2.0 * (t + r - 1.0) / (st * (st + sr));
}

/// d g(r, t) / dt at fixed r.
inline double oracle_average_factor_dt(double r, double t) {
  const double st = oracle_sigma(t), sr = oracle_sigma(r);
  const double num = 2.0 * (t + r - 1.0);
  const double den = st * (st + sr);
  const double dst = (2.0 * t - 1.0) / st;
  const double dden = dst * (2.0 * st + sr);
  return (2.0 * den - num * dden) / (den * den);
}

inline Tensor oracle_velocity(const Tensor& z, double t) { return scale(z, oracle_velocity_factor(t)); }

inline Tensor oracle_average_velocity(const Tensor& z, double r, double t) {
  if (r > t) throw DomainError("oracle_average_velocity: r > t");
  return scale(z, oracle_average_factor(r, t));
}

/// Position at time s of the trajectory through z at time t.
inline Tensor oracle_trajectory(const Tensor& z, double t, double s) {
  return scale(z, oracle_sigma(s) / oracle_sigma(t));
}

/// Model adaptor exposing the closed-form average velocity through the same
/// forward / forward_jvp surface as the network.
struct GaussianFlowOracle {
  std::size_t dim = 2;

  Tensor forward(const Tensor& z, const Tensor& r, const Tensor& t) const {
    Tensor out(z.shape());
    const std::size_t d = z.cols();
    for (std::size_t b = 0; b < z.rows(); ++b) {
      if (r[b] > t[b]) throw DomainError("oracle: r > t");
      const double g = oracle_average_factor(r[b], t[b]);
      for (std::size_t j = 0; j < d; ++j) out.at(b, j) = g * z.at(b, j);
    }
    return out;
  }

  JvpResult forward_jvp(const Tensor& z, const Tensor& r, const Tensor& t, const Tensor& v) const {
    Tensor u = forward(z, r, t);
    Tensor dudt(z.shape());
    const std::size_t d = z.cols();
    for (std::size_t b = 0; b < z.rows(); ++b) {
      const double g = oracle_average_factor(r[b], t[b]);
      const double dg = oracle_average_factor_dt(r[b], t[b]);
      for (std::size_t j = 0; j < d; ++j) dudt.at(b, j) = g * v.at(b, j) + dg * z.at(b, j);
    }
    return {std::move(u), std::move(dudt)};
  }
};

/// Network snapshot viewed through the model interface used by targets and samplers.
struct NetworkModel {
  const ModelParams* params;

  Tensor forward(const Tensor& z, const Tensor& r, const Tensor& t) const { return dmf::forward(*params, z, r, t); }
  JvpResult forward_jvp(const Tensor& z, const Tensor& r, const Tensor& t, const Tensor& v) const {
    return dmf::forward_jvp(*params, z, r, t, v);
  }
};

template <class M>
concept AverageVelocityModel = requires(const M& m, const Tensor& x) {
  { m.forward(x, x, x) } -> std::convertible_to<Tensor>;
  { m.forward_jvp(x, x, x, x) } -> std::convertible_to<JvpResult>;
};

// ---------------------------------------------------------------------------
// Toy datasets.

inline const std::vector<std::string>& dataset_names() {
  static const std::vector<std::string> names{"gauss", "gmm-ring", "two-moons"};
  return names;
}

inline bool is_dataset(const std::string& name) {
  const auto& n = dataset_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

/// Native dimension of a dataset; "gauss" takes `gauss_dim`.
inline std::size_t dataset_dim(const std::string& name, std::size_t gauss_dim = 2) {
  if (name == "gauss") return gauss_dim;
  if (name == "gmm-ring" || name == "two-moons") return 2;
  throw DomainError("unknown dataset '" + name + "'");
}

inline constexpr std::size_t kRingModes = 8;
inline constexpr double kRingRadius = 2.0;
inline constexpr double kRingStd = 0.1;
inline constexpr double kMoonsNoise = 0.05;

inline Tensor ring_centers() {
  Tensor c({kRingModes, 2});
  for (std::size_t k = 0; k < kRingModes; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / kRingModes;
    c.at(k, 0) = kRingRadius * std::cos(a);
    c.at(k, 1) = kRingRadius * std::sin(a);
  }
  return c;
}

/// Draws n points. gauss: N(0, I_d). gmm-ring: 8 equal-weight modes on the
/// radius-2 circle with std 0.1. two-moons: the usual interleaved half
/// circles (outer: (cos a, sin a); inner: (1 - cos a, 0.5 - sin a)) plus
/// N(0, 0.05^2) noise.
inline Tensor sample_dataset(const std::string& name, std::size_t n, Rng& rng, std::size_t gauss_dim = 2) {
  const std::size_t d = dataset_dim(name, gauss_dim);
  if (name == "gauss") return rng.normal_tensor({n, d});
  Tensor out({n, 2});
  if (name == "gmm-ring") {
    const Tensor centers = ring_centers();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = rng.index(kRingModes);
      out.at(i, 0) = centers.at(k, 0) + kRingStd * rng.normal();
      out.at(i, 1) = centers.at(k, 1) + kRingStd * rng.normal();
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const bool outer = rng.uniform() < 0.5;
    const double a = rng.uniform(0.0, std::numbers::pi);
    if (outer) {
      out.at(i, 0) = std::cos(a);
      out.at(i, 1) = std::sin(a);
    } else {
      out.at(i, 0) = 1.0 - std::cos(a);
      out.at(i, 1) = 0.5 - std::sin(a);
    }
    out.at(i, 0) += kMoonsNoise * rng.normal();
    out.at(i, 1) += kMoonsNoise * rng.normal();
  }
  return out;
}

}  // namespace dmf
