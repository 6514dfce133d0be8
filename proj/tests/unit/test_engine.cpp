#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "fedsample/engine.hpp"
#include "fedsample/error.hpp"
#include "fedsample/metrics_io.hpp"
#include "reference_fedavg.hpp"

using namespace fedsample;

namespace {

struct Fixture {
  FederatedDataset data;
  ModelSpec model;
  RoundConfig config;
};

Fixture make(policy::PolicyConfig policy, std::size_t K = 12, double C = 0.5, std::uint64_t seed = 3) {
  Fixture f;
  BlobsOptions o;
  o.n_classes = 4;
  o.dim = 6;
  o.n_clients = K;
  o.samples_per_client = 15;
  o.shards_per_client = 2;
  o.seed = seed;
  f.data = synth_blobs(o);
  f.model.kind = ModelKind::mlp1;
  f.model.input_dim = 6;
  f.model.hidden_dim = 5;
  f.model.n_classes = 4;
  f.config.K = K;
  f.config.C = C;
  f.config.E = 2;
  f.config.B = 4;
  f.config.eta = 0.1;
  f.config.policy = policy;
  f.config.seed = seed;
  return f;
}

std::string csv_of(const ExperimentResult& r) {
  std::ostringstream os;
  metrics::write_csv(os, r.metrics);
  return os.str();
}

ParamVector scalar(double v) { return ParamVector{{v}, {{"x", {1}}}}; }

}  // namespace

TEST(SelectClients, SizesAndDeterminism) {
  EXPECT_EQ(select_clients(10, 1.0, 1, 0), (std::vector<ClientId>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(select_clients(10, 0.05, 1, 0).size(), 1u);
  EXPECT_EQ(select_clients(100, 0.29, 1, 0).size(), 29u);
  EXPECT_EQ(select_clients(50, 0.2, 7, 4), select_clients(50, 0.2, 7, 4));
  EXPECT_NE(select_clients(50, 0.2, 7, 4), select_clients(50, 0.2, 8, 4));
  const auto s = select_clients(50, 0.2, 3, 9);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<ClientId>(s.begin(), s.end()).size(), s.size());
}

TEST(SelectClients, RoughlyUniform) {
  std::map<ClientId, int> hits;
  for (std::size_t round = 1; round <= 4000; ++round) {
    for (auto k : select_clients(20, 0.25, round, 1)) ++hits[k];
  }
  for (ClientId k = 0; k < 20; ++k) EXPECT_NEAR(hits[k], 1000, 150) << k;
}

TEST(MessageBytes, Accounting) {
  EXPECT_EQ(bytes::ack(101770), 407088u);
  EXPECT_EQ(bytes::nack(), 8u);
  EXPECT_EQ(bytes::scalar_report(), 4u);
  EXPECT_EQ(bytes::threshold_broadcast(), 4u);
  EXPECT_EQ(bytes::model_broadcast(10), 40u);
  EXPECT_EQ(bytes::message({0, 5, Ack{scalar(1)}}, 101770), 407088u);
  EXPECT_EQ(bytes::message({0, 5, Nack{}}, 101770), 8u);
}

TEST(Aggregate, Examples) {
  EXPECT_EQ(aggregate({{scalar(0), 1}, {scalar(4), 3}}).data[0], 3.0);
  const ParamVector p{{0.1, -0.7, 1.0 / 3.0}, {{"x", {3}}}};
  EXPECT_EQ(aggregate({{p, 1}, {p, 7}, {p, 13}}), p);
  EXPECT_THROW(aggregate({}), Error);
  EXPECT_THROW(aggregate({{scalar(1), 1}, {p, 1}}), Error);
}

TEST(ServerEstimate, AckAndCarryForward) {
  auto state = ServerState::initial(scalar(2.5));
  EXPECT_EQ(server_estimate({0, 3, Ack{scalar(7)}}, state, NackEstimate::carry_forward), scalar(7));
  EXPECT_EQ(server_estimate({0, 3, Nack{}}, state, NackEstimate::carry_forward), scalar(2.5));
  // ou_decode without fits falls back to the current global model.
  EXPECT_EQ(server_estimate({0, 3, Nack{}}, state, NackEstimate::ou_decode), scalar(2.5));
  EXPECT_THROW(server_estimate({0, 3, Ack{ParamVector{{1, 2}, {{"x", {2}}}}}}, state, NackEstimate::carry_forward),
               Error);
}

TEST(ServerEstimate, OuDecodeFastReversionGivesMean) {
  auto state = ServerState::initial(scalar(2.5));
  state.fit_coordinates = {0};
  ou::OuEstimate est;
  est.status = ou::FitStatus::ok;
  est.fit.a = std::exp(-60.0);
  est.params = ou::OUParams{60.0, -1.25, 0.1};
  state.ou_fits = {est};
  EXPECT_EQ(server_estimate({0, 3, Nack{}}, state, NackEstimate::ou_decode).data[0], -1.25);

  // Fitted slope at or below zero is clamped: the estimate is μ̂ = b / (1 - 1e-6).
  ou::OuEstimate flat;
  flat.status = ou::FitStatus::degenerate;
  flat.fit.a = -0.2;
  flat.fit.b = 0.75;
  state.ou_fits = {flat};
  EXPECT_NEAR(server_estimate({0, 3, Nack{}}, state, NackEstimate::ou_decode).data[0], 0.75, 1e-5);

  ou::OuEstimate nonrev;
  nonrev.status = ou::FitStatus::non_reverting;
  nonrev.fit.a = 1.2;
  state.ou_fits = {nonrev};
  EXPECT_EQ(server_estimate({0, 3, Nack{}}, state, NackEstimate::ou_decode).data[0], 2.5);
}

TEST(ServerEstimate, RefreshFitsFromHistory) {
  auto state = ServerState::initial(scalar(1.0));
  EXPECT_FALSE(refresh_ou_fits(state, TrackSpec::none()));
  for (double v : {0.5, 0.25, 0.125}) {
    state.global_params = scalar(v);
    state.history.push_back(state.global_params);
  }
  ASSERT_TRUE(refresh_ou_fits(state, TrackSpec::none()));
  ASSERT_EQ(state.ou_fits.size(), 1u);
  EXPECT_NEAR(state.ou_fits[0].fit.a, 0.5, 1e-12);
  EXPECT_NEAR(server_estimate({0, 1, Nack{}}, state, NackEstimate::ou_decode).data[0], 0.0625, 1e-12);
}

TEST(RunRound, FtZeroEverybodySends) {
  auto f = make(policy::FixedThreshold{0.0});
  CommLedger ledger;
  const auto state = ServerState::initial(initial_params(f.model, f.config.seed));
  const auto out = run_round(state, f.config, f.model, f.data, ledger);
  const std::size_t P = f.model.param_count();
  EXPECT_EQ(out.report.senders, out.report.selected);
  EXPECT_EQ(out.report.uplink_bytes, out.report.senders * (4 * P + 8));
  EXPECT_EQ(out.report.downlink_bytes, out.report.selected * 4 * P);
  EXPECT_EQ(out.report.threshold, 0.0);
}

TEST(RunRound, FtInfinityCarriesForward) {
  auto f = make(policy::FixedThreshold{INFINITY});
  const auto r = run_experiment(f.config, f.model, f.data, 4);
  EXPECT_EQ(r.final_state.global_params, initial_params(f.model, f.config.seed));
  for (const auto& row : r.metrics) {
    EXPECT_EQ(row.senders, 0u);
    EXPECT_EQ(row.uplink_bytes, row.selected * 8);
  }
}

TEST(RunRound, AdaptiveThresholdClosedForm) {
  auto f = make(policy::AdaptiveThreshold{});
  const auto r = run_experiment(f.config, f.model, f.data, 5);
  const std::uint64_t P = f.model.param_count();
  for (const auto& row : r.metrics) {
    const std::uint64_t m = row.selected, s = row.senders;
    EXPECT_EQ(row.uplink_bytes, 4 * m + s * (4 * P + 8) + (m - s) * 8);
    EXPECT_EQ(row.downlink_bytes, m * 4 * P + 4 * m);
    ASSERT_TRUE(row.threshold.has_value());
    EXPECT_EQ(*row.threshold, policy::compute_adaptive_threshold(row.client_scalars));
  }
}

TEST(RunRound, LedgerInvariants) {
  auto f = make(policy::Random{0.4});
  const auto r = run_experiment(f.config, f.model, f.data, 8);
  std::uint64_t cum = 0;
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    const auto& row = r.ledger.rows()[i];
    EXPECT_EQ(row.senders + row.nacks, row.selected);
    cum += row.uplink_bytes;
    EXPECT_EQ(r.metrics[i].cum_uplink_bytes, cum);
    EXPECT_EQ(r.metrics[i].round, i + 1);
  }
  EXPECT_EQ(r.ledger.cumulative_uplink(), cum);
  CommLedger bad;
  EXPECT_THROW(bad.append({1, 3, 1, 1, 0, 0}), Error);
}

TEST(RunRound, SenderSetInclusionAcrossGamma) {
  auto f = make(policy::Full{});
  const auto state = ServerState::initial(initial_params(f.model, f.config.seed));
  std::vector<std::vector<ClientId>> senders;
  for (double gamma : {0.0, 0.2, 0.4, 0.8, 1.6}) {
    f.config.policy = policy::FixedThreshold{gamma};
    CommLedger ledger;
    senders.push_back(run_round(state, f.config, f.model, f.data, ledger).report.sender_ids);
  }
  for (std::size_t i = 1; i < senders.size(); ++i) {
    EXPECT_TRUE(std::includes(senders[i - 1].begin(), senders[i - 1].end(), senders[i].begin(), senders[i].end()));
  }
}

TEST(RunRound, ParallelMatchesSequential) {
  for (const policy::PolicyConfig& p :
       std::vector<policy::PolicyConfig>{policy::Full{}, policy::AdaptiveThreshold{}, policy::AdaptiveOu{}}) {
    auto f = make(p);
    const auto seq = run_experiment(f.config, f.model, f.data, 4, {1});
    const auto par = run_experiment(f.config, f.model, f.data, 4, {4});
    EXPECT_EQ(csv_of(seq), csv_of(par));
    EXPECT_EQ(seq.final_state.global_params, par.final_state.global_params);
  }
}

TEST(RunExperiment, DeterministicAndFtBelowFull) {
  auto f = make(policy::Full{});
  const auto full = run_experiment(f.config, f.model, f.data, 6);
  EXPECT_EQ(csv_of(full), csv_of(run_experiment(f.config, f.model, f.data, 6)));
  f.config.policy = policy::FixedThreshold{0.3};
  const auto ft = run_experiment(f.config, f.model, f.data, 6);
  EXPECT_LE(ft.ledger.cumulative_uplink(), full.ledger.cumulative_uplink());
  EXPECT_EQ(run_experiment(f.config, f.model, f.data, 1).metrics.size(), 1u);
  EXPECT_THROW(run_experiment(f.config, f.model, f.data, 0), Error);
}

TEST(RunExperiment, FullMatchesReferenceFedAvg) {
  auto f = make(policy::Full{}, 20, 0.2, 11);
  const auto result = run_experiment(f.config, f.model, f.data, 6);
  oracle::ReferenceFedAvg ref(f.model, f.data, f.config.C, f.config.E, f.config.B, f.config.eta, f.config.seed);
  for (const auto& row : result.metrics) {
    const auto r = ref.step();
    EXPECT_EQ(r.selected, row.selected_ids);
  }
  EXPECT_EQ(ref.weights(), result.final_state.global_params.data);
}

TEST(RunExperiment, OuDecodeRunsAndFlagsShortHistory) {
  auto f = make(policy::OuFraction{0.5});
  f.config.nack_estimate = NackEstimate::ou_decode;
  f.config.history_rounds = 5;
  const auto r = run_experiment(f.config, f.model, f.data, 8);
  EXPECT_TRUE(r.final_state.global_params.all_finite());
  EXPECT_LE(r.final_state.history.size(), 5u);
  for (const auto& row : r.metrics) {
    if (row.round < 3 && row.senders < row.selected) EXPECT_TRUE(row.ou_decode_fallback);
    if (row.round >= 3) EXPECT_FALSE(row.ou_decode_fallback);
    for (double frac : row.client_scalars) {
      EXPECT_GE(frac, 0.0);
      EXPECT_LE(frac, 1.0);
    }
  }
}

TEST(RunExperiment, ConfigErrors) {
  auto f = make(policy::Full{});
  f.config.K = 13;
  EXPECT_THROW(run_experiment(f.config, f.model, f.data, 1), Error);
  f.config.K = 12;
  f.config.C = 0.0;
  EXPECT_THROW(run_experiment(f.config, f.model, f.data, 1), Error);
}
