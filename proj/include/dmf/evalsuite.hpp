#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "dmf/curriculum.hpp"
#include "dmf/network.hpp"
#include "dmf/paths.hpp"
#include "dmf/rng.hpp"

namespace dmf {

// ---------------------------------------------------------------------------
// Samplers

/// z1 ~ N(0, I), z0 = z1 - u(z1, 0, 1).
template <AverageVelocityModel Model>
Tensor sample_one_step(const Model& net, std::size_t batch, std::size_t dim, Rng& rng) {
  const Tensor z1 = rng.normal_tensor({batch, dim});
  const Tensor out = sub(z1, net.forward(z1, Tensor({batch}, 0.0), Tensor({batch}, 1.0)));
  if (!out.all_finite()) throw NonFiniteError("sample_one_step: non-finite samples");
  return out;
}

/// Uniform grid 1 = t_n > ... > t_0 = 0 with z_{k-1} = z_k - (t_k - t_{k-1}) u(z_k, t_{k-1}, t_k).
template <AverageVelocityModel Model>
Tensor sample_n_step(const Model& net, std::size_t batch, std::size_t dim, std::size_t steps, Rng& rng) {
  if (steps < 1) throw DomainError("sample_n_step: need at least one step");
  Tensor z = rng.normal_tensor({batch, dim});
  const double n = static_cast<double>(steps);
  for (std::size_t k = steps; k >= 1; --k) {
    const double t = static_cast<double>(k) / n;
    const double s = static_cast<double>(k - 1) / n;
    const Tensor u = net.forward(z, Tensor({batch}, s), Tensor({batch}, t));
    z = sub(z, scale(u, t - s));
  }
  if (!z.all_finite()) throw NonFiniteError("sample_n_step: non-finite samples");
  return z;
}

// ---------------------------------------------------------------------------
// Distribution distances

namespace detail {

inline double mean_pair_distance(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = a.row(i).data();
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double* y = b.row(j).data();
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[k] - y[k];
        sq += diff * diff;
      }
      row += std::sqrt(sq);
    }
    acc += row;
  }
  return acc / (static_cast<double>(n) * static_cast<double>(m));
}

}  // namespace detail

/// 2 E|x - y| - E|x - x'| - E|y - y'| over all pairs (V-statistic, so the
/// value is the energy distance between the two empirical measures and is
/// never negative).
inline double energy_distance(const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) throw ShapeError("energy_distance: need N x d and M x d");
  if (x.rows() < 2 || y.rows() < 2) throw DomainError("energy_distance: need at least two points per set");
  const double exy = detail::mean_pair_distance(x, y);
  const double exx = detail::mean_pair_distance(x, x);
  const double eyy = detail::mean_pair_distance(y, y);
  return std::max(0.0, 2.0 * exy - exx - eyy);
}

struct ModeCoverage {
  double within_frac = 0.0;   // samples within 3 std of some ring mode
  std::size_t modes_hit = 0;  // modes receiving at least 1% of the samples
};

inline ModeCoverage ring_mode_coverage(const Tensor& samples) {
  const Tensor centers = ring_centers();
  std::vector<std::size_t> hits(kRingModes, 0);
  std::size_t within = 0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    for (std::size_t k = 0; k < kRingModes; ++k) {
      const double dx = samples.at(i, 0) - centers.at(k, 0);
      const double dy = samples.at(i, 1) - centers.at(k, 1);
      if (std::sqrt(dx * dx + dy * dy) <= 3.0 * kRingStd) {
        ++within;
        ++hits[k];
        break;
      }
    }
  }
  ModeCoverage out;
  out.within_frac = samples.rows() ? static_cast<double>(within) / static_cast<double>(samples.rows()) : 0.0;
  for (auto h : hits) {
    if (static_cast<double>(h) >= 0.01 * static_cast<double>(samples.rows())) ++out.modes_hit;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Identity verification on the closed-form Gaussian flow

struct IdentityCheck {
  std::string identity;
  std::string check;
  double value = 0.0;
  double threshold = 0.0;
  bool upper_bound = true;  // pass when value < threshold; otherwise value must lie in [threshold, upper]
  double upper = 0.0;
  bool pass = false;
};

struct IdentityReport {
  std::vector<IdentityCheck> checks;
  double seconds = 0.0;

  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const IdentityCheck& c) { return c.pass; });
  }

  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks) {
      if (!c.pass) out.push_back(c.identity + "/" + c.check);
    }
    return out;
  }
};

inline constexpr const char* kIdentityHeader = "identity,check,value,lower,upper,pass";

namespace detail {

struct OraclePoint {
  Tensor z;  // 1 x d
  double r, t;
};

inline std::vector<OraclePoint> oracle_points(std::size_t n, std::size_t d, Rng& rng, double min_gap) {
  std::vector<OraclePoint> pts;
  while (pts.size() < n) {
    double a = rng.uniform(0.02, 0.98), b = rng.uniform(0.02, 0.98);
    if (a > b) std::swap(a, b);
    if (b - a < min_gap) continue;
    pts.push_back({rng.normal_tensor({1, d}), a, b});
  }
  return pts;
}

inline Tensor oracle_u(const Tensor& z, double r, double t) { return oracle_average_velocity(z, r, t); }

/// Discrete average-velocity estimate with the marginal velocity.
inline Tensor discrete_estimate(const OraclePoint& p, double delta) {
  const Tensor v = oracle_velocity(p.z, p.t);
  const Tensor shifted = oracle_u(sub(p.z, scale(v, delta)), p.r, p.t - delta);
  const double span = p.t - p.r;
  return scale(add(scale(v, delta), scale(shifted, span)), 1.0 / (delta + span));
}

/// Least-squares slope of log(err) against log(delta).
inline double loglog_slope(const std::vector<double>& delta, const std::vector<double>& err) {
  const std::size_t n = delta.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(delta[i]);
    my += std::log(err[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(delta[i]) - mx;
    sxy += dx * (std::log(err[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace detail

/// Numerically checks the average-velocity identities on the closed-form
/// Gaussian flow: the continuous identity (finite-difference total
/// derivative), second-order convergence of the discrete form, the
/// semigroup property, and each algebraic step from the continuous identity
/// to the discrete form. `strict` tightens every bound by 10x.
inline IdentityReport verify_identities(bool strict = false, std::uint64_t seed = 0, std::size_t dim = 2) {
  const auto start = std::chrono::steady_clock::now();
  const double k = strict ? 0.1 : 1.0;
  Rng rng(seed);
  IdentityReport rep;
  auto below = [&](std::string id, std::string check, double value, double bound) {
    rep.checks.push_back({std::move(id), std::move(check), value, bound * k, true, 0.0, value < bound * k});
  };
  auto within = [&](std::string id, std::string check, double value, double lo, double hi) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo) * k;
    rep.checks.push_back({std::move(id), std::move(check), value, mid - half, false, mid + half,
                          value >= mid - half && value <= mid + half});
  };

  const auto pts = detail::oracle_points(64, dim, rng, 0.05);

  // Continuous identity: u = v + (r - t) du/dt, du/dt by central differences along the trajectory.
  {
    const double h = 1e-5;
    double worst = 0.0;
    for (const auto& p : pts) {
      const Tensor u = detail::oracle_u(p.z, p.r, p.t);
      const Tensor up = detail::oracle_u(oracle_trajectory(p.z, p.t, p.t + h), p.r, p.t + h);
      const Tensor um = detail::oracle_u(oracle_trajectory(p.z, p.t, p.t - h), p.r, p.t - h);
      const Tensor dudt = scale(sub(up, um), 1.0 / (2.0 * h));
      const Tensor rhs = add(oracle_velocity(p.z, p.t), scale(dudt, p.r - p.t));
      worst = std::max(worst, max_abs_diff(u, rhs));
    }
    below("meanflow_identity", "max_abs_residual_fd", worst, 1e-5);
  }

  // Discrete form: error vs delta is second order.
  {
    std::vector<double> deltas, errs;
    for (double delta = 1e-2; delta >= 0.99e-5; delta /= std::sqrt(10.0)) {
      double err = 0.0;
      for (const auto& p : pts) err += max_abs_diff(detail::discrete_estimate(p, delta), detail::oracle_u(p.z, p.r, p.t));
      deltas.push_back(delta);
      errs.push_back(err / static_cast<double>(pts.size()));
    }
    within("discrete_meanflow", "loglog_slope_1e-2_to_1e-5", detail::loglog_slope(deltas, errs), 1.8, 2.2);
    double e1 = 0.0, e2 = 0.0;
    for (const auto& p : pts) {
      e1 += max_abs_diff(detail::discrete_estimate(p, 1e-3), detail::oracle_u(p.z, p.r, p.t));
      e2 += max_abs_diff(detail::discrete_estimate(p, 5e-4), detail::oracle_u(p.z, p.r, p.t));
    }
    within("discrete_meanflow", "halving_ratio_1e-3_to_5e-4", e1 / e2, 3.5, 4.5);
  }

  // Semigroup: z_t - (t - r) u(z_t, r, t) lands on the trajectory at r.
  {
    double worst = 0.0;
    for (const auto& p : pts) {
      const Tensor zr = sub(p.z, scale(detail::oracle_u(p.z, p.r, p.t), p.t - p.r));
      const Tensor ref = oracle_trajectory(p.z, p.t, p.r);
      worst = std::max(worst, max_abs_diff(zr, ref) / (max_abs(ref) + 1e-12));
    }
    below("semigroup", "max_rel_residual", worst, 1e-6);
  }

  // Limit definitions: one-sided differences approach the partial derivatives.
  {
    const double h = 1e-7;
    double worst_z = 0.0, worst_t = 0.0, worst_chain = 0.0;
    const GaussianFlowOracle oracle{dim};
    for (const auto& p : pts) {
      const Tensor v = oracle_velocity(p.z, p.t);
      const Tensor u = detail::oracle_u(p.z, p.r, p.t);
      const Tensor r1 = Tensor::vector({p.r}), t1 = Tensor::vector({p.t});
      const Tensor jv = oracle.forward_jvp(p.z, r1, t1, v).dudt;
      const Tensor dt_only = oracle.forward_jvp(p.z, r1, t1, Tensor(p.z.shape())).dudt;
      const Tensor jv_only = sub(jv, dt_only);
      const Tensor fd_z = scale(sub(u, detail::oracle_u(sub(p.z, scale(v, h)), p.r, p.t)), 1.0 / h);
      const Tensor fd_t = scale(sub(u, detail::oracle_u(p.z, p.r, p.t - h)), 1.0 / h);
      worst_z = std::max(worst_z, max_abs_diff(fd_z, jv_only));
      worst_t = std::max(worst_t, max_abs_diff(fd_t, dt_only));
      // Chain rule: J v + du/dt equals the derivative along the trajectory.
      const double hc = 1e-5;
      const Tensor up = detail::oracle_u(oracle_trajectory(p.z, p.t, p.t + hc), p.r, p.t + hc);
      const Tensor um = detail::oracle_u(oracle_trajectory(p.z, p.t, p.t - hc), p.r, p.t - hc);
      worst_chain = std::max(worst_chain, max_abs_diff(jv, scale(sub(up, um), 1.0 / (2.0 * hc))));
    }
    below("limit_definitions", "partial_z_backward_difference", worst_z, 1e-5);
    below("limit_definitions", "partial_t_backward_difference", worst_t, 1e-5);
    below("derivation", "chain_rule_total_derivative", worst_chain, 1e-6);
  }

  // Merging the two partial limits into one joint difference is first order in delta.
  {
    std::vector<double> deltas, errs;
    const GaussianFlowOracle oracle{dim};
    for (double delta = 1e-2; delta >= 0.99e-4; delta /= std::sqrt(10.0)) {
      double err = 0.0;
      for (const auto& p : pts) {
        const Tensor v = oracle_velocity(p.z, p.t);
        const Tensor exact = oracle.forward_jvp(p.z, Tensor::vector({p.r}), Tensor::vector({p.t}), v).dudt;
        const Tensor joint = scale(
            sub(detail::oracle_u(p.z, p.r, p.t), detail::oracle_u(sub(p.z, scale(v, delta)), p.r, p.t - delta)),
            1.0 / delta);
        err += max_abs_diff(joint, exact);
      }
      deltas.push_back(delta);
      errs.push_back(err / static_cast<double>(pts.size()));
    }
    within("derivation", "merged_limit_order", detail::loglog_slope(deltas, errs), 0.8, 1.2);
  }

  // Algebraic rearrangement at finite delta. U solves the difference form
  // U = v - (t - r)(U - u') / delta; every displayed line must hold for U
  // exactly up to rounding.
  {
    double w_diff = 0.0, w_mul = 0.0, w_move = 0.0, w_div = 0.0;
    for (const auto& p : pts) {
      const double delta = rng.uniform(0.01, 0.1) * (p.t - p.r);
      const double span = p.t - p.r;
      const Tensor v = oracle_velocity(p.z, p.t);
      const Tensor u_prev = detail::oracle_u(sub(p.z, scale(v, delta)), p.r, p.t - delta);
      const Tensor big_u = detail::discrete_estimate(p, delta);
      const double s = std::max({max_abs(v), max_abs(u_prev), max_abs(big_u), 1.0});
      // U = v - (t - r)(U - u') / delta
      w_diff = std::max(w_diff, max_abs_diff(big_u, sub(v, scale(sub(big_u, u_prev), span / delta))) / s);
      // U delta = v delta - (t - r)(U - u')
      w_mul = std::max(w_mul, max_abs_diff(scale(big_u, delta), sub(scale(v, delta), scale(sub(big_u, u_prev), span))) /
                                  (s * delta));
      // U (delta + t - r) = v delta + (t - r) u'
      w_move = std::max(w_move, max_abs_diff(scale(big_u, delta + span), add(scale(v, delta), scale(u_prev, span))) / s);
      // U = (v delta + (t - r) u') / (delta + t - r)
      w_div = std::max(w_div,
                       max_abs_diff(big_u, scale(add(scale(v, delta), scale(u_prev, span)), 1.0 / (delta + span))) / s);
    }
    below("algebra", "difference_form", w_diff, 1e-12);
    below("algebra", "multiply_by_delta", w_mul, 1e-12);
    below("algebra", "move_u_to_lhs", w_move, 1e-12);
    below("algebra", "divide_by_delta_plus_span", w_div, 1e-12);
  }

  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline void write_identity_report(const IdentityReport& rep, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string());
  os << kIdentityHeader << '\n';
  os.precision(17);
  for (const auto& c : rep.checks) {
    os << c.identity << ',' << c.check << ',' << c.value << ',' << (c.upper_bound ? 0.0 : c.threshold) << ','
       << (c.upper_bound ? c.threshold : c.upper) << ',' << (c.pass ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Per-batch cost of the continuous (JVP) objective vs the discrete one

struct BenchResult {
  std::size_t trials = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> hidden_dims;
  double fwd_sec_per_batch = 0.0;
  double mf_sec_per_batch = 0.0;
  double dmf_sec_per_batch = 0.0;
  double ratio = 0.0;  // mf / dmf
};

inline constexpr const char* kBenchHeader =
    "hidden_dims,batch,trials,fwd_sec_per_batch,mf_sec_per_batch,dmf_sec_per_batch,ratio,dmf_over_fwd,mf_over_fwd";

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Median wall time per batch of: one prediction forward; prediction forward
/// plus the JVP target; prediction forward plus the discrete target (one
/// extra forward). Trials are interleaved and preceded by warmup rounds.
inline BenchResult bench_objectives(const std::vector<std::size_t>& hidden_dims, std::size_t batch,
                                    std::size_t trials, std::size_t dim = 2, std::uint64_t seed = 0,
                                    std::size_t warmup = 3) {
  if (trials < 10) throw DomainError("bench_objectives: need at least 10 trials");
  const ModelParams params = init_params(dim, hidden_dims, seed, InitOptions{false});
  Rng rng(seed + 1);
  Tensor z0 = rng.normal_tensor({batch, dim});
  Tensor eps = rng.normal_tensor({batch, dim});
  Tensor t({batch}), r({batch});
  for (std::size_t b = 0; b < batch; ++b) {
    double x = rng.uniform(0.05, 0.95), y = rng.uniform(0.05, 0.95);
    if (x < y) std::swap(x, y);
    if (x - y < 1e-3) x = std::min(0.99, y + 0.1);
    t[b] = x;
    r[b] = y;
  }
  const PathSample sample = interpolate(std::move(z0), std::move(eps), std::move(t), std::move(r));
  const NetworkModel net{&params};
  const CurriculumSchedule schedule{3, 2.0, ScheduleKind::VE, 1e-6, 1};

  using clock = std::chrono::steady_clock;
  volatile double sink = 0.0;
  auto time_it = [&](const std::function<Tensor()>& fn) {
    const auto t0 = clock::now();
    const Tensor out = fn();
    const double sec = std::chrono::duration<double>(clock::now() - t0).count();
    sink = sink + out[0];
    return sec;
  };
  auto fwd = [&] { return forward(params, sample.zt, sample.r, sample.t); };
  auto mf = [&] {
    Tensor pred = forward(params, sample.zt, sample.r, sample.t);
    return add(pred, build_target(net, sample, sample.vt, 2, schedule).u_target);
  };
  auto dmf = [&] {
    Tensor pred = forward(params, sample.zt, sample.r, sample.t);
    return add(pred, build_target(net, sample, sample.vt, 1, schedule).u_target);
  };
  for (std::size_t i = 0; i < warmup; ++i) {
    time_it(fwd);
    time_it(mf);
    time_it(dmf);
  }
  std::vector<double> tf, tm, td;
  for (std::size_t i = 0; i < trials; ++i) {
    tf.push_back(time_it(fwd));
    tm.push_back(time_it(mf));
    td.push_back(time_it(dmf));
  }
  BenchResult res;
  res.trials = trials;
  res.batch = batch;
  res.hidden_dims = hidden_dims;
  res.fwd_sec_per_batch = median(tf);
  res.mf_sec_per_batch = median(tm);
  res.dmf_sec_per_batch = median(td);
  res.ratio = res.mf_sec_per_batch / res.dmf_sec_per_batch;
  return res;
}

inline std::string join_dims(const std::vector<std::size_t>& dims, char sep = ';') {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(dims[i]);
  }
  return s;
}

inline void write_bench_report(const BenchResult& b, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string());
  os.precision(9);
  os << kBenchHeader << '\n'
     << join_dims(b.hidden_dims) << ',' << b.batch << ',' << b.trials << ',' << b.fwd_sec_per_batch << ','
     << b.mf_sec_per_batch << ',' << b.dmf_sec_per_batch << ',' << b.ratio << ','
     << b.dmf_sec_per_batch / b.fwd_sec_per_batch << ',' << b.mf_sec_per_batch / b.fwd_sec_per_batch << '\n';
}

}  // namespace dmf
