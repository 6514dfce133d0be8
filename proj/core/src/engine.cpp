#include "fedsample/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsample/error.hpp"
#include "fedsample/parallel.hpp"
#include "fedsample/rng.hpp"

namespace fedsample {

const char* to_string(NackEstimate mode) noexcept {
  return mode == NackEstimate::ou_decode ? "ou_decode" : "carry_forward";
}

NackEstimate parse_nack_estimate(const std::string& text) {
  if (text == "carry_forward") return NackEstimate::carry_forward;
  if (text == "ou_decode") return NackEstimate::ou_decode;
  fail(ErrorCode::invalid_argument, "unknown nack_estimate_mode '" + text + "'");
}

std::size_t RoundConfig::clients_per_round() const {
  // The epsilon absorbs products such as 0.29 * 100 = 28.999999999999996.
  const double m = std::floor(C * static_cast<double>(K) + 1e-9);
  return std::clamp<std::size_t>(m < 1.0 ? 1 : static_cast<std::size_t>(m), 1, std::max<std::size_t>(K, 1));
}

void RoundConfig::validate() const {
  require(K >= 1, ErrorCode::invalid_argument, "K must be >= 1");
  require(C > 0.0 && C <= 1.0, ErrorCode::invalid_argument, "C must be in (0, 1]");
  require(B >= 1, ErrorCode::invalid_argument, "B must be >= 1");
  require(std::isfinite(eta) && eta >= 0.0, ErrorCode::invalid_argument, "eta must be finite and >= 0");
  require(history_rounds >= 1, ErrorCode::invalid_argument, "history_rounds must be >= 1");
  policy::validate(policy);
}

ServerState ServerState::initial(ParamVector params) {
  ServerState s;
  s.global_params = std::move(params);
  s.history.push_back(s.global_params);
  return s;
}

std::uint64_t bytes::message(const UpdateMessage& msg, std::size_t param_count) {
  return msg.is_ack() ? ack(param_count) : nack();
}

void CommLedger::append(const LedgerRow& row) {
  require(row.senders + row.nacks == row.selected, ErrorCode::internal_error,
          "ledger row: senders + nacks != selected");
  rows_.push_back(row);
  cum_uplink_ += row.uplink_bytes;
  cum_downlink_ += row.downlink_bytes;
}

std::vector<ClientId> select_clients(std::size_t K, double C, std::size_t round, std::uint64_t seed) {
  require(K >= 1, ErrorCode::invalid_argument, "select_clients: K must be >= 1");
  RoundConfig cfg;
  cfg.K = K;
  cfg.C = C;
  const std::size_t m = cfg.clients_per_round();

  std::vector<ClientId> ids(K);
  std::iota(ids.begin(), ids.end(), ClientId{0});
  Rng rng(derive_seed(seed, {stream::select, round}));
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(K - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool refresh_ou_fits(ServerState& state, const TrackSpec& track) {
  state.fit_coordinates.clear();
  state.ou_fits.clear();
  if (state.history.size() < 3) return false;

  const std::size_t P = state.global_params.size();
  state.fit_coordinates =
      track.mode == TrackSpec::Mode::none ? TrackSpec::automatic(P, 0).indices(P) : track.indices(P);
  state.ou_fits.reserve(state.fit_coordinates.size());
  std::vector<double> values(state.history.size());
  for (auto j : state.fit_coordinates) {
    for (std::size_t h = 0; h < state.history.size(); ++h) values[h] = state.history[h].data[j];
    state.ou_fits.push_back(ou::fit_ou_ls(ou::Trajectory(values, 1.0)));
  }
  return true;
}

ParamVector server_estimate(const UpdateMessage& msg, const ServerState& state, NackEstimate mode) {
  if (const auto* ack = std::get_if<Ack>(&msg.payload)) {
    require(ack->params.size() == state.global_params.size(), ErrorCode::invalid_argument,
            "ACK parameter count does not match the global model");
    return ack->params;
  }
  ParamVector est = state.global_params;
  if (mode == NackEstimate::carry_forward || state.ou_fits.empty()) return est;
  for (std::size_t i = 0; i < state.fit_coordinates.size(); ++i) {
    const auto params = ou::decode_params(state.ou_fits[i]);
    if (!params) continue;
    const auto j = state.fit_coordinates[i];
    est.data[j] = ou::decode(state.global_params.data[j], *params, 1.0);
  }
  return est;
}

ParamVector aggregate(const std::vector<std::pair<ParamVector, std::size_t>>& estimates) {
  if (estimates.empty()) fail(ErrorCode::internal_error, "aggregate: no estimates");
  const std::size_t P = estimates.front().first.size();
  std::size_t total = 0;
  for (const auto& [params, n] : estimates) {
    require(params.size() == P, ErrorCode::invalid_argument, "aggregate: dimension mismatch");
    total += n;
  }
  require(total > 0, ErrorCode::invalid_argument, "aggregate: total sample count is zero");

  // The weighted mean of identical vectors is that vector; return it bit-exactly.
  const bool identical = std::all_of(estimates.begin() + 1, estimates.end(),
                                     [&](const auto& e) { return e.first.data == estimates.front().first.data; });
  if (identical) return estimates.front().first;

  ParamVector out;
  out.shape = estimates.front().first.shape;
  out.data.assign(P, 0.0);
  const double denom = static_cast<double>(total);
  for (const auto& [params, n] : estimates) {
    const double w = static_cast<double>(n) / denom;
    for (std::size_t j = 0; j < P; ++j) out.data[j] += w * params.data[j];
  }
  return out;
}

std::uint64_t client_train_seed(std::uint64_t run_seed, std::size_t round, ClientId client) {
  return derive_seed(run_seed, {stream::train, round, client});
}

ParamVector initial_params(const ModelSpec& model, std::uint64_t seed) {
  return init_params(model, derive_seed(seed, {stream::init}));
}

namespace {

struct ClientResult {
  ParamVector params_after;
  std::size_t n_samples = 0;
  policy::ClientStats stats;
};

double client_band_fraction(const LocalTrainReport& report) {
  std::vector<double> finals;
  std::vector<ou::OuEstimate> fits;
  finals.reserve(report.tracked.size());
  fits.reserve(report.tracked.size());
  for (std::size_t c = 0; c < report.tracked.size(); ++c) {
    finals.push_back(report.params_after.data[report.tracked[c]]);
    if (report.trajectory[c].size() >= 3) {
      fits.push_back(ou::fit_ou_ls(report.trajectory[c]));
    } else {
      fits.emplace_back();  // too few steps to fit: degenerate, counted as settled
    }
  }
  return ou::band_fraction(finals, fits);
}

Evaluation evaluate_global(const ModelSpec& model, const ParamVector& params, const FederatedDataset& dataset) {
  if (dataset.test_set.size() > 0 || model.kind == ModelKind::quadratic) {
    return evaluate(model, params, dataset.test_set);
  }
  // No held-out rows: report the sample-weighted training metrics instead.
  Evaluation total;
  std::size_t n = 0;
  for (const auto& client : dataset.clients) {
    const auto ev = evaluate(model, params, client);
    total.accuracy += ev.accuracy * static_cast<double>(client.size());
    total.loss += ev.loss * static_cast<double>(client.size());
    n += client.size();
  }
  total.accuracy /= static_cast<double>(n);
  total.loss /= static_cast<double>(n);
  return total;
}

}  // namespace

RoundOutcome run_round(const ServerState& state, const RoundConfig& config, const ModelSpec& model,
                       const FederatedDataset& dataset, CommLedger& ledger, const EngineOptions& options) {
  config.validate();
  require(config.K == dataset.n_clients(), ErrorCode::invalid_argument,
          "K does not match the dataset's client count");
  const std::size_t P = model.param_count();
  require(state.global_params.size() == P, ErrorCode::invalid_argument,
          "server state does not match the model parameter count");

  const std::size_t t = state.round + 1;
  const auto selected = select_clients(config.K, config.C, t, config.seed);
  const std::size_t m = selected.size();

  RoundReport report;
  report.round = t;
  report.policy = policy::label(config.policy);
  report.selected = m;
  report.seed = config.seed;
  report.selected_ids = selected;

  std::uint64_t uplink = 0;
  std::uint64_t downlink = m * bytes::model_broadcast(P);

  const bool need_band = policy::needs_band_fraction(config.policy);
  const TrackSpec track = config.track.mode == TrackSpec::Mode::none ? TrackSpec::automatic(P, config.seed)
                                                                     : config.track;

  std::vector<ClientResult> results(m);
  parallel_for(m, options.threads, [&](std::size_t i) {
    const ClientId k = selected[i];
    TrainOptions opts;
    opts.epochs = config.E;
    opts.batch_size = config.B;
    opts.eta = config.eta;
    opts.seed = client_train_seed(config.seed, t, k);
    opts.track = need_band ? track : TrackSpec::none();
    auto trained = local_train(model, state.global_params, dataset.clients[k], opts);
    auto& r = results[i];
    r.n_samples = trained.n_samples;
    r.stats.update_norm = trained.update_norm;
    if (need_band) r.stats.band_fraction = client_band_fraction(trained);
    r.params_after = std::move(trained.params_after);
  });

  report.client_scalars.reserve(m);
  for (const auto& r : results) {
    report.client_scalars.push_back(need_band ? *r.stats.band_fraction : *r.stats.update_norm);
  }

  std::optional<double> broadcast;
  if (policy::needs_adaptive_threshold(config.policy)) {
    uplink += m * bytes::scalar_report();
    broadcast = policy::compute_adaptive_threshold(report.client_scalars);
    downlink += m * bytes::threshold_broadcast();
    report.threshold = broadcast;
  } else {
    report.threshold = policy::static_threshold(config.policy);
  }

  std::vector<UpdateMessage> messages;
  messages.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const ClientId k = selected[i];
    Rng coin(derive_seed(config.seed, {stream::dropout, t, k}));
    UpdateMessage msg;
    msg.client_id = k;
    msg.n_samples = results[i].n_samples;
    if (policy::local_decide(config.policy, results[i].stats, broadcast, coin)) {
      msg.payload = Ack{std::move(results[i].params_after)};
      report.sender_ids.push_back(k);
    } else {
      msg.payload = Nack{};
    }
    uplink += bytes::message(msg, P);
    messages.push_back(std::move(msg));
  }
  report.senders = report.sender_ids.size();

  RoundOutcome out;
  out.state.round = t;
  out.state.history = state.history;

  // Fits are only needed to decode silent clients.
  ServerState fit_state;
  const ServerState* estimator = &state;
  if (config.nack_estimate == NackEstimate::ou_decode && report.senders < m) {
    fit_state.global_params = state.global_params;
    fit_state.history = state.history;
    if (!refresh_ou_fits(fit_state, track)) report.ou_decode_fallback = true;
    estimator = &fit_state;
  }

  std::vector<std::pair<ParamVector, std::size_t>> estimates;
  estimates.reserve(m);
  for (const auto& msg : messages) {
    estimates.emplace_back(server_estimate(msg, *estimator, config.nack_estimate), msg.n_samples);
  }
  out.state.global_params = aggregate(estimates);
  if (!out.state.global_params.all_finite()) {
    fail(ErrorCode::numeric_error, "aggregated parameters are non-finite in round " + std::to_string(t));
  }
  out.state.fit_coordinates = std::move(fit_state.fit_coordinates);
  out.state.ou_fits = std::move(fit_state.ou_fits);

  out.state.history.push_back(out.state.global_params);
  while (out.state.history.size() > config.history_rounds) out.state.history.pop_front();

  const auto ev = evaluate_global(model, out.state.global_params, dataset);
  report.test_acc = ev.accuracy;
  report.test_loss = ev.loss;

  LedgerRow row;
  row.round = t;
  row.selected = m;
  row.senders = report.senders;
  row.nacks = m - report.senders;
  row.uplink_bytes = uplink;
  row.downlink_bytes = downlink;
  ledger.append(row);

  report.uplink_bytes = uplink;
  report.downlink_bytes = downlink;
  report.cum_uplink_bytes = ledger.cumulative_uplink();
  out.report = std::move(report);
  return out;
}

ExperimentResult run_experiment(const RoundConfig& config, const ModelSpec& model, const FederatedDataset& dataset,
                                std::size_t rounds, const EngineOptions& options,
                                const std::function<void(const MetricsRow&)>& on_round) {
  require(rounds >= 1, ErrorCode::invalid_argument, "rounds must be >= 1");
  config.validate();
  model.validate();
  dataset.validate();

  ExperimentResult result;
  ServerState state = ServerState::initial(initial_params(model, config.seed));
  result.metrics.reserve(rounds);
  for (std::size_t r = 0; r < rounds; ++r) {
    auto outcome = run_round(state, config, model, dataset, result.ledger, options);
    state = std::move(outcome.state);
    if (on_round) on_round(outcome.report);
    result.metrics.push_back(std::move(outcome.report));
  }
  result.final_state = std::move(state);
  return result;
}

}  // namespace fedsample
