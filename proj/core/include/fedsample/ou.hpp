#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fedsample::ou {

/// Parameters of dθ = λ(μ − θ)dt + σ dW.
struct OUParams {
  double lambda = 1.0;  ///< mean-reversion rate (1/time)
  double mu = 0.0;      ///< long-run mean
  double sigma = 0.0;   ///< volatility, >= 0

  /// Standard deviation of the stationary law N(μ, σ²/2λ). Requires λ > 0.
  double stationary_sd() const;
};

/// Equally spaced samples of one scalar path.
class Trajectory {
 public:
  /// Throws invalid-argument unless values is non-empty, all finite and dt > 0.
  Trajectory(std::vector<double> values, double dt);

  const std::vector<double>& values() const noexcept { return values_; }
  double dt() const noexcept { return dt_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

 private:
  std::vector<double> values_;
  double dt_;
};

/// θ_{t+1} = aθ_t + b + ε_t regression output.
struct LSFit {
  double a = 0.0;
  double b = 0.0;
  double resid_sd = 0.0;
  std::size_t n_points = 0;
  bool degenerate = false;  ///< predictor had zero variance; a and b are undefined
};

enum class FitStatus {
  ok,             ///< 0 < a < 1, all of λ, μ, σ recovered
  degenerate,     ///< zero predictor variance, or fitted a <= 0
  non_reverting,  ///< fitted a >= 1
};

struct OuEstimate {
  FitStatus status = FitStatus::degenerate;
  LSFit fit;
  std::optional<OUParams> params;  ///< populated only when status == ok
  double dt = 1.0;
};

/// Exact-discretization simulation, length steps + 1 starting at theta0.
/// Throws invalid-argument on non-finite input or dt <= 0, and unsupported
/// when λ <= 0 with σ > 0.
Trajectory simulate_ou(const OUParams& params, double theta0, double dt, std::size_t steps,
                       std::uint64_t seed);

/// Ordinary least squares of θ_{t+1} on θ_t (with intercept) followed by the
/// inversion λ = −ln(a)/Δt, μ = b/(1−a), σ = s·sqrt(−2 ln a / (Δt(1−a²))).
/// Throws insufficient-data when the trajectory has fewer than 3 points.
OuEstimate fit_ou_ls(const Trajectory& traj);

/// Recovers (λ, μ, σ) for the decoder even when the fitted slope is <= 0, by
/// clamping a to kMinSlope. Returns nullopt for zero-variance or a >= 1 fits.
std::optional<OUParams> decode_params(const OuEstimate& est);

inline constexpr double kMinSlope = 1e-6;

/// Conditional mean E[θ_t | θ_0 = theta_ref] = e^{−λt}θ_ref + (1 − e^{−λt})μ.
double decode(double theta_ref, const OUParams& params, double elapsed);

/// Fraction of coordinates whose final value lies strictly outside
/// [μ − σ_band, μ + σ_band], σ_band the stationary sd of that coordinate's fit.
/// Degenerate fits count as inside, non-reverting fits as outside.
double band_fraction(std::span<const double> finals, std::span<const OuEstimate> fits);

}  // namespace fedsample::ou
