#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "fedsample/rng.hpp"

namespace fedsample::policy {

/// Every selected client sends (plain FedAvg).
struct Full {};
/// Each selected client is independently dropped with probability q.
struct Random {
  double q = 0.0;
};
/// Send when ‖Δ‖₂ > gamma.
struct FixedThreshold {
  double gamma = 0.0;
};
/// Send when ‖Δ‖₂ > γ_t, γ_t = mean − std of this round's reported norms.
struct AdaptiveThreshold {};
/// Send when the OU band fraction exceeds r.
struct OuFraction {
  double r = 0.0;
};
/// Send when the OU band fraction exceeds γ_t computed from reported fractions.
struct AdaptiveOu {};

using PolicyConfig = std::variant<Full, Random, FixedThreshold, AdaptiveThreshold, OuFraction, AdaptiveOu>;

/// Throws invalid-argument for parameters outside their ranges.
void validate(const PolicyConfig& policy);

/// Short label such as "FT(gamma=0.5)"; never contains commas.
std::string label(const PolicyConfig& policy);

/// Parses a label produced by label(), e.g. "Full", "Random(q=0.3)", "AT", "OU(r=0.2)".
PolicyConfig parse_label(const std::string& text);

/// The server-side pre-phase (one scalar up, γ_t down) is required.
bool needs_adaptive_threshold(const PolicyConfig& policy) noexcept;
/// Clients must record trajectories and compute band fractions.
bool needs_band_fraction(const PolicyConfig& policy) noexcept;
/// Threshold value reported for the round, if the policy has a static one.
std::optional<double> static_threshold(const PolicyConfig& policy) noexcept;

/// Population mean minus population standard deviation. Throws
/// invalid-argument for empty or non-finite input. May be negative.
double compute_adaptive_threshold(std::span<const double> scalars);

struct ClientStats {
  std::optional<double> update_norm;
  std::optional<double> band_fraction;
};

/// Client-side send decision; all comparisons are strict. `rng` is only
/// consumed by Random. Throws invalid-argument when a statistic or threshold
/// the policy needs is missing.
bool local_decide(const PolicyConfig& policy, const ClientStats& stats,
                  std::optional<double> broadcast_threshold, Rng& rng);

}  // namespace fedsample::policy
