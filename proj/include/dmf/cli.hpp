#pragma once

// Subcommand bodies for the `dmf` tool. Each returns the process exit
// status: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dmf/checkpoint.hpp"
#include "dmf/config.hpp"
#include "dmf/evalsuite.hpp"
#include "dmf/trainer.hpp"

#ifndef DMF_VERSION
#define DMF_VERSION "unknown"
#endif

namespace dmf::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Held-out points for evaluation; the seed is disjoint from every training stream.
inline Tensor heldout_set(const std::string& dataset, std::size_t n, std::size_t dim) {
  Rng rng(0x4845'4C44'4F55'5400ULL);
  return sample_dataset(dataset, n, rng, dim);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  fs::path config;
  std::string dataset;  // overrides the config when non-empty
  fs::path out;
  std::optional<fs::path> init_from;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool resume = false;
  bool quiet = false;
};

/// Everything a run directory records about how it was produced.
inline json manifest_json(const TrainConfig& cfg, const TrainArgs& args, const std::string& status,
                          const std::string& diagnostic) {
  json m{{"name", cfg.name},
         {"config_path", args.config.string()},
         {"dataset", cfg.dataset},
         {"schedule_preset", cfg.name + ":" + to_string(cfg.schedule_kind) + ":K" + std::to_string(cfg.stages_K)},
         {"output_dir", args.out.string()},
         {"code_version", DMF_VERSION},
         {"seed", cfg.seed},
         {"init_from", args.init_from ? args.init_from->string() : ""},
         {"status", status}};
  if (!diagnostic.empty()) m["diagnostic"] = diagnostic;
  return m;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

/// Latest stage_<i>.ckpt in a run directory, if any.
inline std::optional<std::size_t> latest_stage_checkpoint(const fs::path& dir) {
  std::optional<std::size_t> best;
  if (!fs::exists(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("stage_", 0) == 0 && entry.path().extension() == ".ckpt") {
      const std::size_t i = std::stoul(name.substr(6, name.size() - 11));
      if (!best || i > *best) best = i;
    }
  }
  return best;
}

/// Resolves the effective config: file, then --dataset, DMF_SEED, --seed and --epochs overrides.
inline TrainConfig resolve_config(const TrainArgs& args) {
  TrainConfig cfg = load_config(args.config);
  if (!args.dataset.empty()) cfg.dataset = args.dataset;
  if (const char* env = std::getenv("DMF_SEED"); env && *env) {
    try {
      cfg.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("DMF_SEED", "not an unsigned integer");
    }
  }
  if (args.seed) cfg.seed = *args.seed;
  if (args.epochs) cfg.epochs = *args.epochs;
  validate_config(cfg);
  return cfg;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  TrainConfig cfg;
  try {
    cfg = resolve_config(args);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (args.out.empty()) {
    err << "error: --out is required\n";
    return kExitUsage;
  }

  RunOptions options;
  options.out_dir = args.out;
  const bool exists_nonempty = fs::exists(args.out) && !fs::is_empty(args.out);
  if (exists_nonempty && !args.resume) {
    err << "error: output directory " << args.out << " is not empty (use --resume to continue it)\n";
    return kExitUsage;
  }
  try {
    if (args.init_from) {
      if (!fs::exists(*args.init_from)) {
        err << "error: checkpoint " << *args.init_from << " does not exist\n";
        return kExitUsage;
      }
      options.init = load_checkpoint(*args.init_from);
    }
    if (args.resume && exists_nonempty) {
      if (fs::exists(args.out / "final.ckpt")) {
        out << "run already complete: " << (args.out / "final.ckpt").string() << '\n';
        return kExitOk;
      }
      if (const auto stage = latest_stage_checkpoint(args.out)) {
        options.init = load_checkpoint(args.out / ("stage_" + std::to_string(*stage) + ".ckpt"));
        options.resume = true;
        options.start_epoch = (*stage + 1) * cfg.epochs_per_stage();
        options.append_metrics = true;
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  fs::create_directories(args.out);
  write_json(args.out / "config.resolved.json", config_to_json(cfg));
  write_json(args.out / "manifest.json", manifest_json(cfg, args, "running", ""));

  const Tensor data = training_set(cfg);
  if (!args.quiet) {
    options.on_epoch = [&out](const EpochMetrics& m) {
      out << "epoch " << m.epoch << " stage " << m.stage << " loss " << m.loss << " fm_frac " << m.fm_frac << '\n';
    };
  }
  RunResult result;
  try {
    result = run_curriculum(cfg, data, std::move(options));
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    write_json(args.out / "manifest.json", manifest_json(cfg, args, "rejected", e.what()));
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    write_json(args.out / "manifest.json", manifest_json(cfg, args, "failed", e.what()));
    return kExitFailure;
  }
  if (result.halted) {
    err << "halted: " << result.diagnostic << '\n';
    write_json(args.out / "manifest.json", manifest_json(cfg, args, "halted", result.diagnostic));
    return kExitFailure;
  }
  write_json(args.out / "manifest.json", manifest_json(cfg, args, "complete", ""));
  if (!args.quiet) out << "wrote " << (args.out / "final.ckpt").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample / eval

/// Binary PPM scatter of the first two coordinates over [-extent, extent]^2:
/// reference points in grey, samples in red.
inline void write_scatter_ppm(const fs::path& path, const Tensor& samples, const Tensor* reference,
                              double extent = 4.0, int size = 512) {
  std::vector<unsigned char> img(static_cast<std::size_t>(size * size * 3), 255);
  auto plot = [&](const Tensor& pts, unsigned char r, unsigned char g, unsigned char b) {
    for (std::size_t i = 0; i < pts.rows(); ++i) {
      const double x = pts.at(i, 0);
      const double y = pts.cols() > 1 ? pts.at(i, 1) : 0.0;
      const int px = static_cast<int>((x + extent) / (2.0 * extent) * size);
      const int py = static_cast<int>((extent - y) / (2.0 * extent) * size);
      if (px < 0 || py < 0 || px >= size || py >= size) continue;
      auto* p = &img[static_cast<std::size_t>((py * size + px) * 3)];
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  };
  if (reference) plot(*reference, 160, 160, 160);
  plot(samples, 200, 30, 30);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << "P6\n" << size << ' ' << size << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
}

inline void write_samples_csv(const fs::path& path, const Tensor& samples) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < samples.cols(); ++j) os << (j ? "," : "") << 'x' << j;
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    for (std::size_t j = 0; j < samples.cols(); ++j) os << (j ? "," : "") << samples.at(i, j);
    os << '\n';
  }
}

/// Dataset recorded next to a checkpoint in config.resolved.json.
inline std::string dataset_near(const fs::path& ckpt) {
  const fs::path cfg = ckpt.parent_path() / "config.resolved.json";
  if (!fs::exists(cfg)) return {};
  std::ifstream is(cfg);
  const json j = json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.contains("dataset")) return {};
  return j.at("dataset").get<std::string>();
}

struct SampleArgs {
  fs::path ckpt;
  fs::path out = ".";
  std::string dataset;
  std::size_t n = 10000;
  std::size_t steps = 1;
  std::uint64_t seed = 0;
  std::string metric = "energy";
  std::size_t heldout = 2000;
  bool raw_weights = false;  // sample with raw weights instead of the EMA shadow
};

struct SampleOutcome {
  Tensor samples;
  json metrics;
};

inline SampleOutcome run_sample(const SampleArgs& args) {
  const Checkpoint ck = load_checkpoint(args.ckpt);
  const ModelParams params = args.raw_weights ? ck.params : evaluation_params(ck);
  const NetworkModel net{&params};
  Rng rng(args.seed);
  const auto t0 = std::chrono::steady_clock::now();
  SampleOutcome res;
  res.samples = sample_n_step(net, args.n, params.data_dim, args.steps, rng);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.metrics = json{{"n_samples", args.n}, {"n_steps", args.steps}, {"seed", args.seed}, {"wall_time", wall}};
  if (!args.dataset.empty()) {
    const Tensor ref = heldout_set(args.dataset, args.heldout, params.data_dim);
    const std::size_t m = std::min(args.n, args.heldout * 2);
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    res.metrics["dataset"] = args.dataset;
    res.metrics["energy_distance"] = energy_distance(take_rows(res.samples, idx), ref);
    res.metrics["heldout"] = args.heldout;
    if (args.dataset == "gmm-ring") {
      const ModeCoverage cov = ring_mode_coverage(res.samples);
      res.metrics["mode_within_3std_frac"] = cov.within_frac;
      res.metrics["modes_hit"] = cov.modes_hit;
    }
  }
  return res;
}

inline int cmd_sample(SampleArgs args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (!fs::exists(args.ckpt)) {
    err << "error: checkpoint " << args.ckpt << " does not exist\n";
    return kExitUsage;
  }
  if (args.steps < 1 || args.n < 2) {
    err << "error: need --steps >= 1 and --n >= 2\n";
    return kExitUsage;
  }
  if (args.metric != "energy" && args.metric != "none") {
    err << "error: unknown metric '" << args.metric << "'\n";
    return kExitUsage;
  }
  if (args.dataset.empty() && args.metric == "energy") args.dataset = dataset_near(args.ckpt);
  if (!args.dataset.empty() && !is_dataset(args.dataset)) {
    err << "error: unknown dataset '" << args.dataset << "'\n";
    return kExitUsage;
  }
  if (args.metric == "none") args.dataset.clear();
  try {
    const SampleOutcome res = run_sample(args);
    fs::create_directories(args.out);
    const std::string tag = "s" + std::to_string(args.steps);
    write_samples_csv(args.out / ("samples_" + tag + ".csv"), res.samples);
    const Tensor ref = args.dataset.empty() ? Tensor{} : heldout_set(args.dataset, args.heldout, res.samples.cols());
    write_scatter_ppm(args.out / ("scatter_" + tag + ".ppm"), res.samples, args.dataset.empty() ? nullptr : &ref);
    write_json(args.out / ("metrics_" + tag + ".json"), res.metrics);
    out << res.metrics.dump() << '\n';
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

struct EvalArgs {
  fs::path ckpt;
  fs::path out = "eval.json";
  std::string dataset;
  std::size_t n = 4000;
  std::vector<std::size_t> steps{1, 2, 5, 10, 50};
  std::uint64_t seed = 0;
};

/// Mean absolute error of u(z, 0, 1) against the closed-form average
/// velocity on `n` standard-normal points with |z| <= 2.
inline double oracle_bulk_mae(const ModelParams& params, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor z({n, params.data_dim});
  std::size_t filled = 0;
  while (filled < n) {
    const Tensor cand = rng.normal_tensor({1, params.data_dim});
    if (norm(cand) > 2.0) continue;
    std::copy_n(cand.data().begin(), params.data_dim, z.row(filled++).begin());
  }
  const Tensor u = forward(params, z, Tensor({n}, 0.0), Tensor({n}, 1.0));
  const Tensor ref = oracle_average_velocity(z, 0.0, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += std::abs(u[i] - ref[i]);
  return acc / static_cast<double>(u.size());
}

inline int cmd_eval(EvalArgs args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (!fs::exists(args.ckpt)) {
    err << "error: checkpoint " << args.ckpt << " does not exist\n";
    return kExitUsage;
  }
  if (args.dataset.empty()) args.dataset = dataset_near(args.ckpt);
  if (!is_dataset(args.dataset)) {
    err << "error: unknown or missing dataset '" << args.dataset << "'\n";
    return kExitUsage;
  }
  try {
    json report{{"checkpoint", args.ckpt.string()}, {"dataset", args.dataset}, {"n", args.n}, {"runs", json::array()}};
    for (std::size_t s : args.steps) {
      SampleArgs sa;
      sa.ckpt = args.ckpt;
      sa.dataset = args.dataset;
      sa.n = args.n;
      sa.steps = s;
      sa.seed = args.seed;
      report["runs"].push_back(run_sample(sa).metrics);
    }
    if (args.dataset == "gauss") {
      report["oracle_bulk_mae_u01"] = oracle_bulk_mae(evaluation_params(load_checkpoint(args.ckpt)), 10000, args.seed);
    }
    write_json(args.out, report);
    out << report.dump(2) << '\n';
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify / bench

struct VerifyArgs {
  fs::path out = "verify_report.csv";
  bool strict = false;
  std::uint64_t seed = 0;
};

inline int cmd_verify(const VerifyArgs& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    const IdentityReport rep = verify_identities(args.strict, args.seed);
    write_identity_report(rep, args.out);
    for (const auto& c : rep.checks) {
      out << (c.pass ? "PASS " : "FAIL ") << c.identity << '/' << c.check << " = " << c.value << '\n';
    }
    if (!rep.all_pass()) {
      err << "identity checks failed:";
      for (const auto& f : rep.failures()) err << ' ' << f;
      err << '\n';
      return kExitFailure;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

struct BenchArgs {
  std::vector<std::size_t> hidden{256, 256, 256};
  std::size_t batch = 256;
  std::size_t trials = 20;
  std::size_t dim = 2;
  std::uint64_t seed = 0;
  fs::path out = "bench.csv";
};

inline int cmd_bench(const BenchArgs& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  if (args.trials < 10) {
    err << "error: --trials must be >= 10\n";
    return kExitUsage;
  }
  try {
    const BenchResult b = bench_objectives(args.hidden, args.batch, args.trials, args.dim, args.seed);
    write_bench_report(b, args.out);
    out << "fwd " << b.fwd_sec_per_batch << " s/batch, mf " << b.mf_sec_per_batch << " s/batch, dmf "
        << b.dmf_sec_per_batch << " s/batch, mf/dmf " << b.ratio << " (median of " << b.trials << ")\n";
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace dmf::cli
