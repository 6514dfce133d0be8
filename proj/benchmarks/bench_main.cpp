#include <benchmark/benchmark.h>

#include "fedsample/engine.hpp"
#include "fedsample/feddata.hpp"
#include "fedsample/learner.hpp"
#include "fedsample/ou.hpp"

namespace {

using namespace fedsample;

void BM_FitOuLs(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  const auto traj = ou::simulate_ou({1.0, 0.5, 0.3}, 0.0, 0.01, steps, 7);
  for (auto _ : state) benchmark::DoNotOptimize(ou::fit_ou_ls(traj));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(steps));
}
BENCHMARK(BM_FitOuLs)->Arg(1000)->Arg(100000);

void BM_LossAndGrad(benchmark::State& state) {
  BlobsOptions opts;
  opts.n_clients = 1;
  opts.samples_per_client = static_cast<std::size_t>(state.range(0));
  opts.shards_per_client = 10;
  const auto data = synth_blobs(opts);
  const ModelSpec spec{ModelKind::mlp1, opts.dim, 32, opts.n_classes};
  const auto params = init_params(spec, 3);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grad(spec, params, data.clients[0]));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGrad)->Arg(10)->Arg(500);

void BM_RunRound(benchmark::State& state) {
  BlobsOptions opts;
  opts.seed = 11;
  const auto data = synth_blobs(opts);
  const ModelSpec spec{ModelKind::mlp1, opts.dim, 32, opts.n_classes};
  RoundConfig cfg;
  cfg.K = opts.n_clients;
  cfg.C = 0.2;
  cfg.E = 2;
  cfg.B = 10;
  cfg.eta = 0.05;
  cfg.seed = 11;
  if (state.range(0) == 1) cfg.policy = policy::AdaptiveThreshold{};
  const auto start = ServerState::initial(initial_params(spec, cfg.seed));
  for (auto _ : state) {
    CommLedger ledger;
    benchmark::DoNotOptimize(run_round(start, cfg, spec, data, ledger));
  }
}
BENCHMARK(BM_RunRound)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
