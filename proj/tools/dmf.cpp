// dmf: train, sample, verify, bench and eval for average-velocity flow models.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmf/dmf.hpp"

namespace {

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (tok.empty()) throw CLI::ValidationError("--hidden", "expected comma-separated widths");
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size() || v == 0) throw CLI::ValidationError("--hidden", "bad width '" + tok + "'");
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = dmf::cli;
  CLI::App app{"Average-velocity flow models trained with a discrete curriculum"};
  app.require_subcommand(1);

  cli::TrainArgs train;
  std::string init_from;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_epochs;
  auto* t = app.add_subcommand("train", "Run the training curriculum");
  t->add_option("--config", train.config, "JSON config")->required()->check(CLI::ExistingFile);
  t->add_option("--dataset", train.dataset, "Dataset override (gauss, gmm-ring, two-moons)");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--init-from", init_from, "Initialise from this checkpoint");
  t->add_option("--seed", train_seed, "Seed (overrides DMF_SEED and the config)");
  t->add_option("--epochs", train_epochs, "Epoch override");
  t->add_flag("--resume", train.resume, "Continue from the latest stage checkpoint in --out");
  t->add_flag("--quiet", train.quiet, "No per-epoch progress");

  cli::SampleArgs sample;
  auto* s = app.add_subcommand("sample", "Draw samples from a checkpoint");
  s->add_option("--ckpt", sample.ckpt, "Checkpoint")->required();
  s->add_option("--n", sample.n, "Number of samples");
  s->add_option("--steps", sample.steps, "Sampling steps (1 = one-step)");
  s->add_option("--seed", sample.seed, "Sampling seed");
  s->add_option("--out", sample.out, "Output directory");
  s->add_option("--dataset", sample.dataset, "Reference dataset (defaults to the run's dataset)");
  s->add_option("--metric", sample.metric, "energy or none");
  s->add_option("--heldout", sample.heldout, "Held-out reference size");
  s->add_flag("--raw-weights", sample.raw_weights, "Use raw weights instead of the EMA shadow");

  cli::VerifyArgs verify;
  auto* v = app.add_subcommand("verify", "Check the average-velocity identities against closed forms");
  v->add_option("--out", verify.out, "Report CSV");
  v->add_flag("--strict", verify.strict, "Tighten every bound by 10x");
  v->add_option("--seed", verify.seed, "Seed for the probe points");

  cli::BenchArgs bench;
  std::string hidden = "256,256,256";
  auto* b = app.add_subcommand("bench", "Time the MF and DMF objectives");
  b->add_option("--hidden", hidden, "Hidden widths, comma separated");
  b->add_option("--batch", bench.batch, "Batch size");
  b->add_option("--trials", bench.trials, "Timed trials (>= 10)");
  b->add_option("--dim", bench.dim, "Data dimension");
  b->add_option("--seed", bench.seed, "Seed");
  b->add_option("--out", bench.out, "Report CSV");

  cli::EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Sweep sampling step counts on a checkpoint");
  e->add_option("--ckpt", eval.ckpt, "Checkpoint")->required();
  e->add_option("--dataset", eval.dataset, "Reference dataset (defaults to the run's dataset)");
  e->add_option("--n", eval.n, "Samples per step count");
  e->add_option("--steps", eval.steps, "Step counts")->delimiter(',');
  e->add_option("--seed", eval.seed, "Seed");
  e->add_option("--out", eval.out, "Report JSON");

  try {
    app.parse(argc, argv);
    if (b->parsed()) bench.hidden = parse_dims(hidden);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : cli::kExitUsage;
  }

  if (t->parsed()) {
    if (!init_from.empty()) train.init_from = init_from;
    train.seed = train_seed;
    train.epochs = train_epochs;
    return cli::cmd_train(train);
  }
  if (s->parsed()) return cli::cmd_sample(sample);
  if (v->parsed()) return cli::cmd_verify(verify);
  if (b->parsed()) return cli::cmd_bench(bench);
  if (e->parsed()) return cli::cmd_eval(eval);
  return cli::kExitUsage;
}
