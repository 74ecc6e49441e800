#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dmf/paths.hpp"
#include "dmf/tensor.hpp"

namespace dmf {

enum class ScheduleKind { Plain, VE };

enum class ObjectiveKind : std::uint8_t { FM, DMF, MF };

inline const char* to_string(ScheduleKind k) { return k == ScheduleKind::VE ? "ve" : "plain"; }

inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::FM:
      return "FM";
    case ObjectiveKind::DMF:
      return "DMF";
    case ObjectiveKind::MF:
      return "MF";
  }
  return "?";
}

/// Stage layout of the curriculum. Stage 0 regresses the conditional
/// velocity, stages 1..K-2 use the discrete target with a shrinking step and
/// stage K-1 uses the continuous (JVP) target.
struct CurriculumSchedule {
  std::size_t stages = 10;
  double decay = 2.0;
  ScheduleKind kind = ScheduleKind::VE;
  double eps_t = 1e-6;
  std::size_t epochs_per_stage = 1;

  std::size_t last_stage() const { return stages - 1; }

  void validate() const {
    if (stages < 1) throw DomainError("schedule: stage count must be >= 1");
    if (!(decay > 1.0)) throw DomainError("schedule: decay factor q must be > 1");
    if (!(eps_t > 0.0)) throw DomainError("schedule: eps_t must be > 0");
    if (epochs_per_stage < 1) throw DomainError("schedule: epochs_per_stage must be >= 1");
  }
};

inline std::size_t stage_of(std::size_t epoch, const CurriculumSchedule& schedule) {
  return std::min(epoch / schedule.epochs_per_stage, schedule.last_stage());
}

/// t / (1 - t): maps [0, 1) to [0, inf).
inline double ve_phi(double t) { return t / (1.0 - t); }
inline double ve_phi_inverse(double y) { return y / (1.0 + y); }

inline Tensor delta_plain(const Tensor& t, const Tensor& r, std::size_t stage, double q) {
  const double div = std::pow(q, static_cast<double>(stage));
  Tensor out(t.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (r[b] > t[b]) throw DomainError("delta_plain: r > t");
    out[b] = (t[b] - r[b]) / div;
  }
  return out;
}

/// Step that shrinks the interval geometrically in phi-space:
/// t' = phi^-1(phi(t) - (phi(t) - phi(r)) / q^i), delta = t - t'.
/// Evaluated as delta = c (1 - t) / (1 + phi(t) - c) with
/// c = (phi(t) - phi(r)) / q^i, which avoids subtracting nearly equal times.
inline double delta_ve(double t, double r, std::size_t stage, double q) {
  if (r > t) throw DomainError("delta_ve: r > t");
  if (t > 1.0 - kTimeMin) {
    throw DomainError("delta_ve: t=" + std::to_string(t) + " is above the clamp 1 - t_min");
  }
  if (stage == 0) return t - r;
  const double c = (t - r) / ((1.0 - t) * (1.0 - r) * std::pow(q, static_cast<double>(stage)));
  return c * (1.0 - t) / (1.0 + ve_phi(t) - c);
}

inline Tensor delta_ve(const Tensor& t, const Tensor& r, std::size_t stage, double q) {
  Tensor out(t.shape());
  for (std::size_t b = 0; b < t.size(); ++b) out[b] = delta_ve(t[b], r[b], stage, q);
  return out;
}

inline Tensor stage_delta(const Tensor& t, const Tensor& r, std::size_t stage, const CurriculumSchedule& s) {
  return s.kind == ScheduleKind::VE ? delta_ve(t, r, stage, s.decay) : delta_plain(t, r, stage, s.decay);
}

/// Regression target for one batch. `u_target` is a plain value: nothing
/// downstream can differentiate through it. `delta_used` is 0 for FM and MF rows.
struct TrainTarget {
  Tensor u_target;
  std::size_t stage = 0;
  Tensor delta_used;
  std::vector<ObjectiveKind> kinds;

  std::size_t count(ObjectiveKind k) const {
    return static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), k));
  }
};

/// Discrete target [v delta + u(z - v delta, r, t - delta) (t - r)] / (delta + t - r),
/// row-wise. The evaluation time is kept at or above r.
template <AverageVelocityModel Model>
Tensor dmf_target(const Model& net, const Tensor& zt, const Tensor& v, const Tensor& r, const Tensor& t,
                  const Tensor& delta) {
  const std::size_t d = zt.cols();
  Tensor t_eval(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) t_eval[i] = std::max(r[i], t[i] - delta[i]);
  const Tensor u_prev = net.forward(sub(zt, scale_rows(v, delta)), r, t_eval);
  Tensor out(zt.shape());
  for (std::size_t i = 0; i < zt.rows(); ++i) {
    const double span = t[i] - r[i];
    const double denom = delta[i] + span;
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = (v.at(i, j) * delta[i] + u_prev.at(i, j) * span) / denom;
  }
  return out;
}

/// Builds the stage target for every row of `sample`, evaluating `net` (a
/// frozen snapshot) where the target needs it. `vt` is the velocity used by
/// the target: the conditional velocity or a stable-field estimate.
template <AverageVelocityModel Model>
TrainTarget build_target(const Model& net, const PathSample& sample, const Tensor& vt, std::size_t stage,
                         const CurriculumSchedule& schedule) {
  const std::size_t batch = sample.batch(), d = sample.dim();
  if (vt.shape() != sample.zt.shape()) throw ShapeError("build_target: vt shape differs from zt");
  if (stage > schedule.last_stage()) throw DomainError("build_target: stage out of range");

  TrainTarget target{vt, stage, Tensor({batch}), std::vector<ObjectiveKind>(batch, ObjectiveKind::FM)};
  std::vector<std::size_t> dmf_rows, mf_rows;
  for (std::size_t b = 0; b < batch; ++b) {
    if (sample.t[b] - sample.r[b] < schedule.eps_t || stage == 0) continue;
    if (stage == schedule.last_stage()) {
      target.kinds[b] = ObjectiveKind::MF;
      mf_rows.push_back(b);
    } else {
      target.kinds[b] = ObjectiveKind::DMF;
      dmf_rows.push_back(b);
    }
  }

  if (!dmf_rows.empty()) {
    const Tensor t = take_rows(sample.t, dmf_rows);
    const Tensor r = take_rows(sample.r, dmf_rows);
    const Tensor delta = stage_delta(t, r, stage, schedule);
    const Tensor u = dmf_target(net, take_rows(sample.zt, dmf_rows), take_rows(vt, dmf_rows), r, t, delta);
    for (std::size_t i = 0; i < dmf_rows.size(); ++i) {
      const std::size_t b = dmf_rows[i];
      std::copy_n(u.row(i).begin(), d, target.u_target.row(b).begin());
      target.delta_used[b] = delta[i];
    }
  }

  if (!mf_rows.empty()) {
    const Tensor zt = take_rows(sample.zt, mf_rows);
    const Tensor v = take_rows(vt, mf_rows);
    const Tensor t = take_rows(sample.t, mf_rows);
    const Tensor r = take_rows(sample.r, mf_rows);
    const JvpResult jvp = net.forward_jvp(zt, r, t, v);
    for (std::size_t i = 0; i < mf_rows.size(); ++i) {
      const std::size_t b = mf_rows[i];
      const double span = t[i] - r[i];
      for (std::size_t j = 0; j < d; ++j) target.u_target.at(b, j) = v.at(i, j) - span * jvp.dudt.at(i, j);
    }
  }

  if (!target.u_target.all_finite()) {
    throw NonFiniteError("build_target: non-finite target at stage " + std::to_string(stage) + " (" +
                         std::to_string(dmf_rows.size()) + " DMF rows, " + std::to_string(mf_rows.size()) +
                         " MF rows)");
  }
  return target;
}

}  // namespace dmf
