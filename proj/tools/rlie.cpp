// rlie command-line tool.
//
//   rlie run --config run.ini [--seed N] [--strategy E1,E3] [--out-dir DIR] [--dry-run]
//   rlie evaluate --config run.ini --checkpoint runs/x_seed0/best_checkpoint.json --strategy E4
//   rlie inspect-cache runs/judgments.jsonl
//   rlie make-splits --config run.ini [--seed N] [--out-dir DIR]

#include <iostream>

#include <CLI11.hpp>

#include "rlie/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Rule induction with LLM judges and a log-odds combiner"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> strategies;
  bool dry_run = false;
  std::string checkpoint;
  std::string cache_path;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (INI)")->required();
    cmd->add_option("--seed", seed, "run a single seed instead of the configured ones");
    cmd->add_option("--out-dir", out_dir, "output directory");
  };

  auto* run = app.add_subcommand("run", "run the loop and evaluate every strategy");
  add_common(run);
  run->add_option("--strategy", strategies, "strategies to evaluate (E1..E4 or long names)")->delimiter(',');
  run->add_flag("--dry-run", dry_run, "render prompts without calling any backend");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate one strategy on a saved checkpoint");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  evaluate->add_option("--strategy", strategies, "strategy (E1..E4 or long name)")->required()->expected(1);

  auto* inspect = app.add_subcommand("inspect-cache", "summarize a judgment cache");
  inspect->add_option("cache", cache_path, "cache JSONL file")->required();

  auto* splits = app.add_subcommand("make-splits", "write the split manifest for a seed");
  add_common(splits);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (inspect->parsed()) return rlie::cmd_inspect_cache(cache_path, std::cout, std::cerr);

  rlie::RunConfig config;
  try {
    config = rlie::load_config(config_path);
  } catch (const std::exception& e) {
    return rlie::report_error(e, std::cerr);
  }
  rlie::CommandOptions opts;
  opts.seed = seed;
  if (!out_dir.empty()) opts.out_dir = out_dir;
  opts.dry_run = dry_run;

  if (run->parsed()) {
    opts.strategies = strategies;
    return rlie::cmd_run(config, opts, rlie::default_backends, std::cout, std::cerr);
  }
  if (evaluate->parsed()) {
    return rlie::cmd_evaluate(config, checkpoint, strategies.front(), opts, rlie::default_backends, std::cout,
                              std::cerr);
  }
  return rlie::cmd_make_splits(config, opts, std::cout, std::cerr);
}
