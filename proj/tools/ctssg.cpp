// Experiment runner: data generation, training, evaluation, ablation and
// robustness sweeps, and the oracle self-checks.

#include <iostream>

#include <CLI11.hpp>

#include "ctssg/commands.hpp"
#include "ctssg/kernels/parallel.hpp"

int main(int argc, char** argv) {
  using namespace ctssg;
  CLI::App app{"ctssg: slice-sequence graph encoder experiments on synthetic volumes"};
  app.require_subcommand(1);
  CliOptions opt;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Experiment config (JSON); built-in desk defaults when omitted")
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "Output directory (defaults to out_dir from the config)");
    sub->add_option("--threads", opt.threads, "Worker threads (0 = runtime default)")
        ->check(CLI::NonNegativeNumber);
  };
  auto seeds = [&](CLI::App* sub) {
    sub->add_option("--seeds", opt.seeds, "Seeds, comma separated (defaults to seeds from the config)")
        ->delimiter(',');
  };

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset to disk");
  common(gen);
  gen->add_flag("--force", opt.force, "Replace an existing, non-empty output directory");
  gen->add_option("--count", opt.count, "Number of volumes (defaults to train + val + test)");

  auto* train = app.add_subcommand("train", "Train one model per seed; writes checkpoint, history and report");
  common(train);
  seeds(train);
  train->add_flag("--resume", opt.resume, "Continue from <out>/state");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  common(eval);
  eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint directory (defaults to <out>/checkpoint)");

  auto* ablate = app.add_subcommand("ablate", "Sweep one axis; one training run per (value, seed)");
  common(ablate);
  seeds(ablate);
  ablate->add_option("--axis", opt.axis, "K, q, L, operator, topology or components")->required();
  ablate->add_option("--values", opt.values, "Axis values, comma separated (axis defaults when omitted)")
      ->delimiter(',');

  auto* robust = app.add_subcommand("robustness", "Evaluate a checkpoint under z-shift or noise perturbations");
  common(robust);
  robust->add_option("--mode", opt.mode, "zshift or noise")->required();
  robust->add_option("--grid", opt.grid, "Perturbation values, comma separated")->delimiter(',');
  robust->add_option("--checkpoint", opt.checkpoint, "Checkpoint directory (defaults to <out>/checkpoint)");

  auto* oracle = app.add_subcommand("oracle-check", "Run the reference-implementation self checks");
  common(oracle);
  oracle->add_option("--suite", opt.suites, "cheb, laplacian, grad, metrics (all when omitted)")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  if (opt.threads > 0) kernels::parallel::set_threads(opt.threads);

  if (*gen) return cmd_gen_data(opt, std::cout, std::cerr);
  if (*train) return cmd_train(opt, std::cout, std::cerr);
  if (*eval) return cmd_eval(opt, std::cout, std::cerr);
  if (*ablate) return cmd_ablate(opt, std::cout, std::cerr);
  if (*robust) return cmd_robustness(opt, std::cout, std::cerr);
  return cmd_oracle_check(opt, std::cout, std::cerr);
}
