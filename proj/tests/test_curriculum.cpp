#include <gtest/gtest.h>

#include "dmf/curriculum.hpp"
#include "dmf/network.hpp"

using namespace dmf;

namespace {

// Row-per-sample batch with the marginal velocity of the Gaussian flow as vt.
PathSample oracle_batch(Rng& rng, std::size_t batch, double min_gap = 0.05) {
  Tensor t({batch}), r({batch});
  for (std::size_t b = 0; b < batch; ++b) {
    double x = rng.uniform(0.02, 0.97), y = rng.uniform(0.02, 0.97);
    if (x > y) std::swap(x, y);
    if (y - x < min_gap) y = std::min(0.97, x + min_gap);
    r[b] = x;
    t[b] = y;
  }
  PathSample s = interpolate(rng.normal_tensor({batch, 2}), rng.normal_tensor({batch, 2}), t, r);
  for (std::size_t b = 0; b < batch; ++b) {
    const double a = oracle_velocity_factor(t[b]);
    for (std::size_t j = 0; j < 2; ++j) s.vt.at(b, j) = a * s.zt.at(b, j);
  }
  return s;
}

struct NanModel {
  Tensor forward(const Tensor& z, const Tensor&, const Tensor&) const { return Tensor(z.shape(), std::nan("")); }
  JvpResult forward_jvp(const Tensor& z, const Tensor&, const Tensor&, const Tensor&) const {
    return {Tensor(z.shape(), std::nan("")), Tensor(z.shape(), std::nan(""))};
  }
};

CurriculumSchedule schedule(std::size_t k, double q, ScheduleKind kind, double eps_t = 1e-6) {
  return CurriculumSchedule{k, q, kind, eps_t, 1};
}

}  // namespace

TEST(Curriculum, StageOf) {
  const CurriculumSchedule s{10, 2.0, ScheduleKind::VE, 1e-6, 200};
  EXPECT_EQ(stage_of(0, s), 0u);
  EXPECT_EQ(stage_of(199, s), 0u);
  EXPECT_EQ(stage_of(200, s), 1u);
  EXPECT_EQ(stage_of(1999, s), 9u);
  EXPECT_EQ(stage_of(50000, s), 9u);
}

TEST(Curriculum, ScheduleValidation) {
  EXPECT_THROW(schedule(0, 2, ScheduleKind::VE).validate(), DomainError);
  EXPECT_THROW(schedule(4, 1.0, ScheduleKind::VE).validate(), DomainError);
  EXPECT_THROW(schedule(4, 2, ScheduleKind::VE, 0.0).validate(), DomainError);
  EXPECT_NO_THROW(schedule(4, 2, ScheduleKind::VE).validate());
}

TEST(Curriculum, DeltaPlain) {
  const Tensor t = Tensor::vector({0.8}), r = Tensor::vector({0.2});
  EXPECT_DOUBLE_EQ(delta_plain(t, r, 0, 2.0)[0], 0.8 - 0.2);
  EXPECT_NEAR(delta_plain(t, r, 1, 2.0)[0], 0.3, 1e-15);
  Rng rng(1);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(delta_plain(t, r, i + 1, 3.0)[0], delta_plain(t, r, i, 3.0)[0] / 3.0, 1e-16);
  }
}

TEST(Curriculum, DeltaVeFullSpanIsExact) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    double r = rng.uniform(0, 1 - kTimeMin), t = rng.uniform(0, 1 - kTimeMin);
    if (r > t) std::swap(r, t);
    EXPECT_EQ(delta_ve(t, r, 0, 2.0), t - r);
  }
}

TEST(Curriculum, DeltaVeHandCase) {
  // Direct evaluation of t - phi^-1(phi(t) - (phi(t) - phi(r)) / q) in long double.
  const long double t = 0.8L, r = 0.2L, q = 2.0L;
  const long double pt = t / (1 - t), pr = r / (1 - r);
  const long double y = pt - (pt - pr) / q;
  const long double ref = t - y / (1 + y);
  EXPECT_NEAR(static_cast<double>(ref), 0.12, 1e-15);
  EXPECT_NEAR(delta_ve(0.8, 0.2, 1, 2.0), 0.12, 1e-12);
  EXPECT_NEAR(delta_plain(Tensor::vector({0.8}), Tensor::vector({0.2}), 1, 2.0)[0], 0.3, 1e-15);
}

TEST(Curriculum, PhiRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(0, 0.999);
    EXPECT_NEAR(ve_phi_inverse(ve_phi(x)), x, 1e-12);
  }
}

TEST(Curriculum, DeltaVeDecreasesAndStaysInSpan) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    double r = rng.uniform(0, 0.99), t = rng.uniform(0, 0.99);
    if (r > t) std::swap(r, t);
    if (t == r) continue;
    double prev = t - r;
    for (std::size_t i = 1; i < 12; ++i) {
      const double d = delta_ve(t, r, i, 2.0);
      EXPECT_GT(d, 0.0);
      EXPECT_LT(d, prev);
      prev = d;
    }
  }
}

TEST(Curriculum, DeltaVeMatchesDirectFormula) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    long double r = rng.uniform(0, 0.99), t = rng.uniform(0, 0.99);
    if (r > t) std::swap(r, t);
    const std::size_t i = rng.index(8);
    const long double pt = t / (1 - t), pr = r / (1 - r);
    const long double y = pt - (pt - pr) / std::pow(4.0L, static_cast<long double>(i));
    const long double ref = t - y / (1 + y);
    EXPECT_NEAR(delta_ve(static_cast<double>(t), static_cast<double>(r), i, 4.0), static_cast<double>(ref), 1e-12);
  }
}

TEST(Curriculum, DeltaVeRejectsAboveClamp) {
  EXPECT_THROW(delta_ve(1.0, 0.5, 1, 2.0), DomainError);
  EXPECT_THROW(delta_ve(1.0 - kTimeMin / 2, 0.5, 1, 2.0), DomainError);
  EXPECT_NO_THROW(delta_ve(1.0 - kTimeMin, 0.5, 1, 2.0));
  EXPECT_THROW(delta_ve(0.4, 0.5, 1, 2.0), DomainError);
}

TEST(Curriculum, StageZeroIsVelocityBitwise) {
  Rng rng(6);
  const PathSample s = oracle_batch(rng, 16);
  const ModelParams p = init_params(2, {16}, 6, InitOptions{false});
  const TrainTarget tt = build_target(NetworkModel{&p}, s, s.vt, 0, schedule(6, 2, ScheduleKind::VE));
  EXPECT_EQ(tt.u_target, s.vt);
  EXPECT_EQ(tt.count(ObjectiveKind::FM), 16u);
  EXPECT_EQ(tt.delta_used, Tensor::zeros({16}));
}

TEST(Curriculum, FullSpanStepAveragesVelocityAndDiagonal) {
  Rng rng(7);
  const ModelParams p = init_params(2, {16, 16}, 7, InitOptions{false});
  const NetworkModel net{&p};
  const PathSample s = oracle_batch(rng, 8);
  const Tensor delta = sub(s.t, s.r);
  const Tensor got = dmf_target(net, s.zt, s.vt, s.r, s.t, delta);
  const Tensor zr = sub(s.zt, scale_rows(s.vt, delta));
  const Tensor want = add(scale(s.vt, 0.5), scale(net.forward(zr, s.r, s.r), 0.5));
  EXPECT_LT(max_abs_diff(got, want), 1e-14);
}

TEST(Curriculum, InterpolationWeightIdentity) {
  Rng rng(8);
  const ModelParams p = init_params(2, {16, 16}, 8, InitOptions{false});
  const NetworkModel net{&p};
  const PathSample s = oracle_batch(rng, 32);
  for (auto kind : {ScheduleKind::Plain, ScheduleKind::VE}) {
    const auto sch = schedule(6, 2, kind);
    for (std::size_t stage = 1; stage < 5; ++stage) {
      const TrainTarget tt = build_target(net, s, s.vt, stage, sch);
      const Tensor delta = stage_delta(s.t, s.r, stage, sch);
      const Tensor u_eval = net.forward(sub(s.zt, scale_rows(s.vt, delta)), s.r, sub(s.t, delta));
      for (std::size_t b = 0; b < 32; ++b) {
        const double alpha = delta[b] / (delta[b] + s.t[b] - s.r[b]);
        EXPECT_GT(alpha, 0.0);
        EXPECT_LE(alpha, 0.5 + 1e-15);
        EXPECT_EQ(tt.kinds[b], ObjectiveKind::DMF);
        EXPECT_DOUBLE_EQ(tt.delta_used[b], delta[b]);
        for (std::size_t j = 0; j < 2; ++j) {
          EXPECT_NEAR(tt.u_target.at(b, j), alpha * s.vt.at(b, j) + (1 - alpha) * u_eval.at(b, j), 1e-12);
        }
      }
    }
  }
}

TEST(Curriculum, LastStageWithOracleRecoversAverageVelocity) {
  Rng rng(9);
  const PathSample s = oracle_batch(rng, 64);
  const TrainTarget tt = build_target(GaussianFlowOracle{2}, s, s.vt, 5, schedule(6, 2, ScheduleKind::VE));
  EXPECT_EQ(tt.count(ObjectiveKind::MF), 64u);
  for (std::size_t b = 0; b < 64; ++b) {
    const double g = oracle_average_factor(s.r[b], s.t[b]);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(tt.u_target.at(b, j), g * s.zt.at(b, j), 1e-4);
  }
}

TEST(Curriculum, FixedPointWithOracle) {
  Rng rng(10);
  const PathSample s = oracle_batch(rng, 64);
  const auto sch = schedule(20, 2, ScheduleKind::VE);
  const GaussianFlowOracle oracle{2};
  const TrainTarget mf = build_target(oracle, s, s.vt, 19, sch);
  const TrainTarget dmf = build_target(oracle, s, s.vt, 12, sch);
  const Tensor truth = oracle.forward(s.zt, s.r, s.t);
  EXPECT_LT(max_abs_diff(mf.u_target, truth), 1e-4);
  EXPECT_LT(max_abs_diff(dmf.u_target, truth), 1e-4);
  EXPECT_LT(max_abs_diff(dmf.u_target, mf.u_target), 1e-4);
}

TEST(Curriculum, DiscreteTargetApproachesContinuousTarget) {
  // Shrinking the step by q divides the gap by about q^2 when vt is the
  // marginal velocity (the discrete form is second order).
  Rng rng(11);
  const GaussianFlowOracle oracle{2};
  const PathSample s = oracle_batch(rng, 16, 0.2);
  const TrainTarget mf = build_target(oracle, s, s.vt, 5, schedule(6, 2, ScheduleKind::Plain));
  const double q = 2.0;
  std::vector<double> errs;
  for (double delta = 1e-2; delta >= 1e-5 * 0.99; delta /= q) {
    const Tensor u = dmf_target(oracle, s.zt, s.vt, s.r, s.t, Tensor({16}, delta));
    errs.push_back(max_abs_diff(u, mf.u_target));
  }
  for (std::size_t i = 0; i + 1 < errs.size(); ++i) {
    if (errs[i + 1] < 1e-11) break;
    const double ratio = errs[i] / errs[i + 1];
    EXPECT_GE(ratio, q * q * 0.8) << "step " << i;
    EXPECT_LE(ratio, q * q * 1.2) << "step " << i;
  }
}

TEST(Curriculum, EpsFallbackPrecedesStageSwitch) {
  Rng rng(12);
  PathSample s = oracle_batch(rng, 20);
  Tensor r = s.r;
  for (std::size_t b = 0; b < 20; b += 2) r[b] = s.t[b] - 1e-7;
  s = interpolate(s.z0, s.eps, s.t, r);
  const ModelParams p = init_params(2, {8}, 12, InitOptions{false});
  const auto sch = schedule(4, 2, ScheduleKind::VE, 1e-6);
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const TrainTarget tt = build_target(NetworkModel{&p}, s, s.vt, stage, sch);
    for (std::size_t b = 0; b < 20; ++b) {
      const bool fm = stage == 0 || s.t[b] - s.r[b] < sch.eps_t;
      EXPECT_EQ(tt.kinds[b] == ObjectiveKind::FM, fm);
      if (fm) {
        EXPECT_EQ(tt.u_target.row(b)[0], s.vt.row(b)[0]);
        EXPECT_EQ(tt.delta_used[b], 0.0);
      }
    }
    if (stage == 3) EXPECT_EQ(tt.count(ObjectiveKind::MF), 10u);
    if (stage == 1) EXPECT_EQ(tt.count(ObjectiveKind::DMF), 10u);
  }
}

TEST(Curriculum, NonFiniteTargetNamesStage) {
  Rng rng(13);
  const PathSample s = oracle_batch(rng, 4);
  try {
    build_target(NanModel{}, s, s.vt, 2, schedule(6, 2, ScheduleKind::VE));
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 2"), std::string::npos);
  }
  EXPECT_NO_THROW(build_target(NanModel{}, s, s.vt, 0, schedule(6, 2, ScheduleKind::VE)));
}

TEST(Curriculum, StageOutOfRange) {
  Rng rng(14);
  const PathSample s = oracle_batch(rng, 4);
  EXPECT_THROW(build_target(GaussianFlowOracle{2}, s, s.vt, 6, schedule(6, 2, ScheduleKind::VE)), DomainError);
}

TEST(Curriculum, TargetDependsOnSnapshotValueOnly) {
  Rng rng(15);
  const PathSample s = oracle_batch(rng, 8);
  ModelParams p = init_params(2, {8}, 15, InitOptions{false});
  const auto sch = schedule(4, 2, ScheduleKind::VE);
  const TrainTarget before = build_target(NetworkModel{&p}, s, s.vt, 1, sch);
  ModelParams q = p;
  q.tensors[0][3] += 0.5;
  const TrainTarget after = build_target(NetworkModel{&q}, s, s.vt, 1, sch);
  EXPECT_GT(max_abs_diff(before.u_target, after.u_target), 0.0);
  EXPECT_EQ(build_target(NetworkModel{&p}, s, s.vt, 1, sch).u_target, before.u_target);
}
