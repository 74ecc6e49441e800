#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmf/checkpoint.hpp"
#include "dmf/curriculum.hpp"
#include "dmf/losses.hpp"
#include "dmf/network.hpp"
#include "dmf/paths.hpp"
#include "dmf/rng.hpp"

namespace dmf {

/// Every knob of a training run. Field names follow the config JSON keys.
struct TrainConfig {
  std::string name = "run";
  std::string dataset;
  std::size_t data_dim = 2;  // only used by "gauss"
  std::size_t dataset_size = 25600;
  std::vector<std::size_t> hidden_dims{256, 256, 256};

  std::size_t batch_size = 256;
  std::size_t epochs = 200;
  std::string optimizer = "adam";
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double ema_rate = 0.999;
  double dropout = 0.0;  // kept for parity with the published tables; the MLP has no dropout

  std::size_t stages_K = 6;
  double decay_q = 2.0;
  double eps_t = 1e-6;
  ScheduleKind schedule_kind = ScheduleKind::VE;

  LossKind loss = LossKind::Adaptive;
  double norm_p = 0.75;
  double robust_c = 1e-3;

  double p_mean = -0.4;
  double p_std = 1.0;
  double prob_t_eq_r = 0.0;
  std::size_t stable_bsub = 0;  // 0: conditional velocity; >0: softmax-kernel stable field
  std::string objective = "curriculum";  // "mf": every epoch trains the final (JVP) stage
  double time_scale = 1.0;               // multiplies the embedding frequency table

  std::uint64_t seed = 0;

  std::size_t steps_per_epoch() const { return std::max<std::size_t>(1, dataset_size / batch_size); }
  std::size_t epochs_per_stage() const { return std::max<std::size_t>(1, epochs / stages_K); }

  CurriculumSchedule schedule() const {
    return CurriculumSchedule{stages_K, decay_q, schedule_kind, eps_t, epochs_per_stage()};
  }

  LossConfig loss_config() const { return LossConfig{loss, norm_p, robust_c}; }

  void validate() const {
    if (!is_dataset(dataset)) throw DomainError("config: unknown or missing dataset '" + dataset + "'");
    if (batch_size < 1) throw DomainError("config: batch_size must be >= 1");
    if (epochs < 1) throw DomainError("config: epochs must be >= 1");
    if (dataset_size < batch_size) throw DomainError("config: dataset_size must be >= batch_size");
    if (optimizer != "adam" && optimizer != "adamw") throw DomainError("config: optimizer must be adam or adamw");
    if (!(lr >= 0.0)) throw DomainError("config: lr must be >= 0");
    if (!(ema_rate >= 0.0 && ema_rate < 1.0)) throw DomainError("config: ema_rate must lie in [0, 1)");
    if (!(prob_t_eq_r >= 0.0 && prob_t_eq_r <= 1.0)) throw DomainError("config: prob_t_eq_r must lie in [0, 1]");
    if (!(p_std > 0.0)) throw DomainError("config: p_std must be > 0");
    if (hidden_dims.empty()) throw DomainError("config: hidden_dims must not be empty");
    if (!(time_scale > 0.0)) throw DomainError("config: time_scale must be > 0");
    if (objective != "curriculum" && objective != "mf") throw DomainError("config: objective must be curriculum or mf");
    if (objective == "mf" && stages_K < 2) throw DomainError("config: objective mf needs stages_K >= 2");
    schedule().validate();
    loss_config().validate();
  }
};

/// Logit-normal (t, r) pairs: two draws sigmoid(N(p_mean, p_std^2)) per row,
/// t = max and r = min; with probability p_t_eq_r the row is forced to r = t.
/// Both are clamped to [t_min, 1 - t_min].
struct TimePairs {
  Tensor t;
  Tensor r;
};

inline double logit_normal(Rng& rng, double p_mean, double p_std) { return sigmoid(rng.normal(p_mean, p_std)); }

inline TimePairs sample_times(std::size_t batch, double p_mean, double p_std, double p_t_eq_r, Rng& rng) {
  TimePairs out{Tensor({batch}), Tensor({batch})};
  for (std::size_t b = 0; b < batch; ++b) {
    const double a = logit_normal(rng, p_mean, p_std);
    const double c = logit_normal(rng, p_mean, p_std);
    double t = std::max(a, c), r = std::min(a, c);
    if (rng.uniform() < p_t_eq_r) r = t;
    out.t[b] = std::clamp(t, kTimeMin, 1.0 - kTimeMin);
    out.r[b] = std::clamp(r, kTimeMin, 1.0 - kTimeMin);
  }
  return out;
}

class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<Tensor>& like, double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    for (const auto& t : like) {
      m_.emplace_back(t.shape());
      v_.emplace_back(t.shape());
    }
  }

  /// One bias-corrected Adam step; weight decay is decoupled (AdamW).
  void update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double lr) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].data();
      auto g = grads[i].data();
      auto m = m_[i].data();
      auto v = v_[i].data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        p[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[k]);
      }
    }
  }

  std::uint64_t steps() const { return step_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.0;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

/// shadow <- rate * shadow + (1 - rate) * params, once per optimizer step.
struct EmaState {
  std::vector<Tensor> shadow;
  double rate = 0.999;

  void update(const std::vector<Tensor>& params) {
    for (std::size_t i = 0; i < shadow.size(); ++i) {
      auto s = shadow[i].data();
      auto p = params[i].data();
      for (std::size_t k = 0; k < s.size(); ++k) s[k] = rate * s[k] + (1.0 - rate) * p[k];
    }
  }
};

struct TrainState {
  ModelParams params;
  Adam adam;
  EmaState ema;

  static TrainState create(ModelParams params, const TrainConfig& cfg) {
    TrainState s;
    s.adam = Adam(params.tensors, cfg.beta1, cfg.beta2, cfg.adam_eps,
                  cfg.optimizer == "adamw" ? cfg.weight_decay : 0.0);
    s.ema = EmaState{params.tensors, cfg.ema_rate};
    s.params = std::move(params);
    return s;
  }
};

struct StepMetrics {
  bool ok = true;
  std::string error;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t stage = 0;
  double delta_mean = 0.0;
  std::size_t fm_rows = 0;
  std::size_t dmf_rows = 0;
  std::size_t mf_rows = 0;
  std::size_t short_gap_rows = 0;  // rows with t - r < eps_t
};

/// One optimizer step on the regression loss between u(zt, r, t) and the
/// stage target. Targets are built from the current parameters before any
/// mutation and enter the loss as constants. A non-finite loss, gradient or
/// update aborts the step and leaves the state untouched.
inline StepMetrics train_step(TrainState& state, const PathSample& batch, const Tensor& vt, std::size_t stage,
                              const CurriculumSchedule& schedule, const LossConfig& loss_cfg, double lr) {
  StepMetrics m;
  m.stage = stage;
  try {
    const TrainTarget target = build_target(NetworkModel{&state.params}, batch, vt, stage, schedule);
    m.fm_rows = target.count(ObjectiveKind::FM);
    m.dmf_rows = target.count(ObjectiveKind::DMF);
    m.mf_rows = target.count(ObjectiveKind::MF);
    m.delta_mean = mean(target.delta_used);
    for (std::size_t b = 0; b < batch.batch(); ++b) {
      if (batch.t[b] - batch.r[b] < schedule.eps_t) ++m.short_gap_rows;
    }

    const ForwardTrace trace = forward_trace(state.params, batch.zt, batch.r, batch.t);
    const LossResult l = loss(trace.output, target.u_target, loss_cfg);
    const std::vector<Tensor> grads = backward(state.params, trace, l.grad);
    m.loss = l.value;
    m.grad_norm = global_norm(grads);
    if (!std::isfinite(m.loss) || !std::isfinite(m.grad_norm)) throw NonFiniteError("non-finite loss or gradient");

    Adam adam_backup = state.adam;
    std::vector<Tensor> backup = state.params.tensors;
    state.adam.update(state.params.tensors, grads, lr);
    if (!state.params.all_finite()) {
      state.params.tensors = std::move(backup);
      state.adam = std::move(adam_backup);
      throw NonFiniteError("non-finite parameters after update");
    }
    state.ema.update(state.params.tensors);
    ++state.params.param_version;
  } catch (const Error& e) {
    m.ok = false;
    m.error = e.what();
  }
  return m;
}

/// One row of the metrics CSV.
struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t stage = 0;
  double fm_frac = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double delta_mean = 0.0;
  double ema_rate = 0.0;
  std::uint64_t seed = 0;
  // Counters behind fm_frac, not written to the CSV.
  std::size_t rows = 0;
  std::size_t fm_rows = 0;
  std::size_t short_gap_rows = 0;
  std::size_t aborted_steps = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,step,stage,objective_kind_fm_frac,loss,grad_norm,delta_mean,ema_rate,seed";

inline std::string format_real(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << m.epoch << ',' << m.step << ',' << m.stage << ',' << format_real(m.fm_frac) << ',' << format_real(m.loss)
     << ',' << format_real(m.grad_norm) << ',' << format_real(m.delta_mean) << ',' << format_real(m.ema_rate)
     << ',' << m.seed;
  return os.str();
}

/// Raised when three consecutive steps abort.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t stage, std::size_t step, const std::string& cause)
      : Error("divergence at stage " + std::to_string(stage) + ", step " + std::to_string(step) + ": " + cause),
        stage_(stage) {}
  std::size_t stage() const { return stage_; }

 private:
  std::size_t stage_;
};

inline constexpr std::size_t kMaxConsecutiveAborts = 3;

struct RunOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.csv, stage_<i>.ckpt, final.ckpt
  std::optional<Checkpoint> init;                 // FROM_CHECKPOINT when set
  bool resume = false;                            // take raw weights and EMA from `init` as-is
  std::size_t start_epoch = 0;
  bool append_metrics = false;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct RunResult {
  ModelParams params;
  std::vector<Tensor> ema;
  std::vector<EpochMetrics> metrics;
  bool halted = false;
  std::string diagnostic;
  std::size_t halted_stage = 0;

  ModelParams ema_params() const {
    ModelParams p = params;
    p.tensors = ema;
    return p;
  }
};

/// Seeds for the independent random streams of a run.
struct RunSeeds {
  std::uint64_t init, data, train;
  explicit RunSeeds(std::uint64_t seed)
      : init(seed * 0x9E3779B97F4A7C15ULL + 1), data(seed * 0x9E3779B97F4A7C15ULL + 2),
        train(seed * 0x9E3779B97F4A7C15ULL + 3) {}
};

inline Tensor training_set(const TrainConfig& cfg) {
  Rng rng(RunSeeds(cfg.seed).data);
  return sample_dataset(cfg.dataset, cfg.dataset_size, rng, cfg.data_dim);
}

/// Runs every stage of the curriculum over `data`. Writes one metrics row per
/// epoch and a checkpoint at the end of each stage when an output directory
/// is given. On three consecutive aborted steps the run halts; the returned
/// parameters are the last finite ones.
inline RunResult run_curriculum(const TrainConfig& cfg, const Tensor& data, RunOptions options = {}) {
  cfg.validate();
  const CurriculumSchedule schedule = cfg.schedule();
  const std::size_t d = dataset_dim(cfg.dataset, cfg.data_dim);
  if (data.rank() != 2 || data.cols() != d) throw ShapeError("run_curriculum: dataset dimension mismatch");
  if (data.rows() < cfg.batch_size) throw DomainError("run_curriculum: dataset smaller than one batch");

  const RunSeeds seeds(cfg.seed);
  ModelParams params;
  if (options.init) {
    const auto& ck = *options.init;
    if (ck.params.data_dim != d || ck.params.hidden_dims != cfg.hidden_dims ||
        ck.params.embedding.scale != cfg.time_scale) {
      throw DomainError("run_curriculum: checkpoint dimensions do not match the config/dataset");
    }
    params = options.resume ? ck.params : evaluation_params(ck);
  } else {
    TimeEmbedding embedding;
    embedding.scale = cfg.time_scale;
    params = init_params(d, cfg.hidden_dims, seeds.init, {}, embedding);
  }
  params.seed = cfg.seed;
  TrainState state = TrainState::create(std::move(params), cfg);
  if (options.resume && options.init && options.init->ema) state.ema.shadow = *options.init->ema;

  std::ofstream csv;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    const auto path = *options.out_dir / "metrics.csv";
    const bool fresh = !options.append_metrics || !std::filesystem::exists(path);
    csv.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw Error("run_curriculum: cannot open " + path.string());
    if (fresh) csv << kMetricsHeader << '\n';
  }

  std::vector<std::size_t> order(data.rows());
  const std::size_t steps_per_epoch = cfg.steps_per_epoch();
  const LossConfig loss_cfg = cfg.loss_config();
  const std::size_t total_epochs = schedule.epochs_per_stage * schedule.stages;

  RunResult result;
  std::size_t consecutive_aborts = 0;
  std::size_t global_step = options.start_epoch * steps_per_epoch;

  for (std::size_t epoch = options.start_epoch; epoch < total_epochs && !result.halted; ++epoch) {
    const std::size_t stage = cfg.objective == "mf" ? schedule.last_stage() : stage_of(epoch, schedule);
    // Each epoch owns its random stream, so a resumed run draws the same batches.
    Rng rng(seeds.train + 0xD1B54A32D192ED03ULL * epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());

    EpochMetrics em;
    em.epoch = epoch;
    em.stage = stage;
    em.ema_rate = cfg.ema_rate;
    em.seed = cfg.seed;
    double loss_sum = 0.0, grad_sum = 0.0, delta_sum = 0.0;
    std::size_t ok_steps = 0;

    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::span<const std::size_t> idx(order.data() + s * cfg.batch_size, cfg.batch_size);
      Tensor z0 = take_rows(data, idx);
      Tensor eps = rng.normal_tensor(z0.shape());
      TimePairs times = sample_times(cfg.batch_size, cfg.p_mean, cfg.p_std, cfg.prob_t_eq_r, rng);
      const PathSample batch = interpolate(std::move(z0), std::move(eps), std::move(times.t), std::move(times.r));
      const Tensor vt = cfg.stable_bsub > 0 ? stable_target_batch(batch, data, cfg.stable_bsub, rng) : batch.vt;

      const StepMetrics m = train_step(state, batch, vt, stage, schedule, loss_cfg, cfg.lr);
      ++global_step;
      em.rows += cfg.batch_size;
      em.short_gap_rows += m.short_gap_rows;
      if (!m.ok) {
        ++em.aborted_steps;
        if (++consecutive_aborts >= kMaxConsecutiveAborts) {
          result.halted = true;
          result.halted_stage = stage;
          result.diagnostic = DivergenceError(stage, global_step, m.error).what();
          break;
        }
        continue;
      }
      consecutive_aborts = 0;
      ++ok_steps;
      em.fm_rows += m.fm_rows;
      loss_sum += m.loss;
      grad_sum += m.grad_norm;
      delta_sum += m.delta_mean;
    }

    em.step = global_step;
    em.fm_frac = em.rows ? static_cast<double>(em.fm_rows) / static_cast<double>(em.rows) : 0.0;
    if (ok_steps) {
      em.loss = loss_sum / static_cast<double>(ok_steps);
      em.grad_norm = grad_sum / static_cast<double>(ok_steps);
      em.delta_mean = delta_sum / static_cast<double>(ok_steps);
    } else {
      em.loss = em.grad_norm = em.delta_mean = std::nan("");
    }
    if (csv.is_open()) csv << metrics_row(em) << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(em);
    result.metrics.push_back(em);

    const bool stage_done = (epoch + 1) % schedule.epochs_per_stage == 0 || epoch + 1 == total_epochs;
    if (!result.halted && stage_done && options.out_dir) {
      save_checkpoint(*options.out_dir / ("stage_" + std::to_string(stage) + ".ckpt"), state.params,
                      &state.ema.shadow);
    }
  }

  if (!result.halted && options.out_dir) {
    save_checkpoint(*options.out_dir / "final.ckpt", state.params, &state.ema.shadow);
  }
  result.params = std::move(state.params);
  result.ema = std::move(state.ema.shadow);
  return result;
}

}  // namespace dmf
