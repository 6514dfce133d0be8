#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

namespace {

void add_common(CLI::App* sub, fedsample::cli::CommonOptions& opts) {
  sub->add_option("--config", opts.config, "experiment config (JSON)")->required();
  sub->add_option("--out", opts.out, "output directory")->required();
  sub->add_option("--seed-override", opts.seed_override, "replace the config seed");
  sub->add_flag("--quiet", opts.quiet, "suppress progress output");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fedsample::cli;

  CLI::App app{"fedsample: federated learning simulator with client-side update sampling"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "run one experiment and write metrics.csv");
  add_common(run, run_opts);

  SweepOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "run a policy x seed grid");
  add_common(sweep, sweep_opts.common);
  sweep->add_option("--grid", sweep_opts.grid, "grid file (JSON with policies and seeds)")->required();

  OuDemoOptions demo_opts;
  auto* demo = app.add_subcommand("ou-demo", "track SGD trajectories and fit per-coordinate OU models");
  add_common(demo, demo_opts.common);
  demo->add_option("--burn-in", demo_opts.burn_in, "fraction of steps dropped before fitting")->capture_default_str();
  demo->add_option("--lag", demo_opts.lag, "increment lag in steps")->capture_default_str();
  demo->add_option("--bins", demo_opts.bins, "histogram bins")->capture_default_str();

  CommonOptions export_opts;
  auto* exp = app.add_subcommand("export-dataset", "write the configured dataset as CSV");
  add_common(exp, export_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalidConfig;
  }

  const std::size_t threads = thread_cap_from_env();
  run_opts.threads = sweep_opts.common.threads = demo_opts.common.threads = export_opts.threads = threads;

  if (*run) return cmd_run(run_opts, std::cerr);
  if (*sweep) return cmd_sweep(sweep_opts, std::cerr);
  if (*demo) return cmd_ou_demo(demo_opts, std::cerr);
  return cmd_export_dataset(export_opts, std::cerr);
}
