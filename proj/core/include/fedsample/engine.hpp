#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedsample/feddata.hpp"
#include "fedsample/learner.hpp"
#include "fedsample/ou.hpp"
#include "fedsample/policies.hpp"

namespace fedsample {

using ClientId = std::size_t;

enum class NackEstimate { carry_forward, ou_decode };

const char* to_string(NackEstimate mode) noexcept;
NackEstimate parse_nack_estimate(const std::string& text);

struct RoundConfig {
  std::size_t K = 1;      ///< total clients
  double C = 1.0;         ///< participation fraction in (0, 1]
  std::size_t E = 1;      ///< local epochs
  std::size_t B = 10;     ///< local batch size
  double eta = 0.01;
  policy::PolicyConfig policy = policy::Full{};
  NackEstimate nack_estimate = NackEstimate::carry_forward;
  std::uint64_t seed = 0;
  std::size_t history_rounds = 20;  ///< H, server history kept for ou_decode
  TrackSpec track;                  ///< coordinates recorded by clients / fitted by the server

  /// m = max(floor(C·K), 1).
  std::size_t clients_per_round() const;
  void validate() const;
};

/// Global model plus the last H aggregated models (newest last).
struct ServerState {
  ParamVector global_params;
  std::size_t round = 0;
  std::deque<ParamVector> history;
  std::vector<std::size_t> fit_coordinates;
  std::vector<ou::OuEstimate> ou_fits;  ///< per fit coordinate, refreshed each round under ou_decode

  static ServerState initial(ParamVector params);
};

struct Ack {
  ParamVector params;
};
struct Nack {};

struct UpdateMessage {
  ClientId client_id = 0;
  std::size_t n_samples = 0;
  std::variant<Ack, Nack> payload;

  bool is_ack() const noexcept { return std::holds_alternative<Ack>(payload); }
};

/// Byte-accounting model: float32 payloads, 8-byte sample counts.
namespace bytes {
inline constexpr std::uint64_t kFloat = 4;
inline constexpr std::uint64_t kCount = 8;

/// ACK → 4P + 8, NACK → 8.
std::uint64_t message(const UpdateMessage& msg, std::size_t param_count);
inline constexpr std::uint64_t ack(std::size_t param_count) { return kFloat * param_count + kCount; }
inline constexpr std::uint64_t nack() { return kCount; }
inline constexpr std::uint64_t scalar_report() { return kFloat; }
inline constexpr std::uint64_t threshold_broadcast() { return kFloat; }
inline constexpr std::uint64_t model_broadcast(std::size_t param_count) { return kFloat * param_count; }
}  // namespace bytes

struct LedgerRow {
  std::size_t round = 0;
  std::size_t selected = 0;
  std::size_t senders = 0;
  std::size_t nacks = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
};

class CommLedger {
 public:
  void append(const LedgerRow& row);
  const std::vector<LedgerRow>& rows() const noexcept { return rows_; }
  std::uint64_t cumulative_uplink() const noexcept { return cum_uplink_; }
  std::uint64_t cumulative_downlink() const noexcept { return cum_downlink_; }

 private:
  std::vector<LedgerRow> rows_;
  std::uint64_t cum_uplink_ = 0;
  std::uint64_t cum_downlink_ = 0;
};

struct RoundReport {
  std::size_t round = 0;
  std::string policy;
  std::size_t selected = 0;
  std::size_t senders = 0;
  std::optional<double> threshold;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t cum_uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double test_acc = 0.0;
  double test_loss = 0.0;
  std::uint64_t seed = 0;

  std::vector<ClientId> selected_ids;
  std::vector<ClientId> sender_ids;
  std::vector<double> client_scalars;  ///< per selected client: the statistic the policy thresholds
  bool ou_decode_fallback = false;     ///< ou_decode requested but history was too short
};

using MetricsRow = RoundReport;

/// Uniform sample of m = max(floor(C·K), 1) clients without replacement,
/// returned in ascending id order. Deterministic per (seed, round).
std::vector<ClientId> select_clients(std::size_t K, double C, std::size_t round, std::uint64_t seed);

/// ACK → payload verbatim; NACK → carry-forward θ_t, or the per-coordinate
/// OU conditional mean one round ahead under ou_decode (coordinates without a
/// usable fit, or a history shorter than 3, carry forward).
ParamVector server_estimate(const UpdateMessage& msg, const ServerState& state, NackEstimate mode);

/// Refits the per-coordinate OU models over state.history (Δt = 1).
/// Returns false, leaving fits empty, when fewer than 3 rounds are available.
bool refresh_ou_fits(ServerState& state, const TrackSpec& track);

/// Σ w_i θ_i with w_i = n_i / Σ_j n_j, summed in list order.
ParamVector aggregate(const std::vector<std::pair<ParamVector, std::size_t>>& estimates);

struct EngineOptions {
  std::size_t threads = 1;  ///< workers for client-local training
};

struct RoundOutcome {
  ServerState state;
  RoundReport report;
};

RoundOutcome run_round(const ServerState& state, const RoundConfig& config, const ModelSpec& model,
                       const FederatedDataset& dataset, CommLedger& ledger, const EngineOptions& options = {});

struct ExperimentResult {
  std::vector<MetricsRow> metrics;
  CommLedger ledger;
  ServerState final_state;
};

/// Initial parameters of a run: init_params seeded from the run seed.
ParamVector initial_params(const ModelSpec& model, std::uint64_t seed);

/// Runs `rounds` sequential rounds from initial_params(model, config.seed).
/// on_round, when set, sees every row as soon as it is produced.
ExperimentResult run_experiment(const RoundConfig& config, const ModelSpec& model, const FederatedDataset& dataset,
                                std::size_t rounds, const EngineOptions& options = {},
                                const std::function<void(const MetricsRow&)>& on_round = {});

/// Seed used for client k's local training in round t.
std::uint64_t client_train_seed(std::uint64_t run_seed, std::size_t round, ClientId client);

}  // namespace fedsample
