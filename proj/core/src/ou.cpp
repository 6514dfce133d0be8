#include "fedsample/ou.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedsample/error.hpp"
#include "fedsample/rng.hpp"

namespace fedsample::ou {

double OUParams::stationary_sd() const {
  require(lambda > 0.0, ErrorCode::invalid_argument, "stationary_sd requires lambda > 0");
  return sigma / std::sqrt(2.0 * lambda);
}

Trajectory::Trajectory(std::vector<double> values, double dt) : values_(std::move(values)), dt_(dt) {
  require(!values_.empty(), ErrorCode::invalid_argument, "trajectory must be non-empty");
  require(std::isfinite(dt_) && dt_ > 0.0, ErrorCode::invalid_argument,
          "trajectory dt must be finite and positive");
  require(std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); }),
          ErrorCode::invalid_argument, "trajectory values must be finite");
}

Trajectory simulate_ou(const OUParams& params, double theta0, double dt, std::size_t steps,
                       std::uint64_t seed) {
  require(std::isfinite(params.lambda) && std::isfinite(params.mu) && std::isfinite(params.sigma) &&
              std::isfinite(theta0) && std::isfinite(dt),
          ErrorCode::invalid_argument, "simulate_ou inputs must be finite");
  require(dt > 0.0, ErrorCode::invalid_argument, "simulate_ou requires dt > 0");
  require(params.sigma >= 0.0, ErrorCode::invalid_argument, "sigma must be >= 0");
  if (params.lambda <= 0.0 && params.sigma > 0.0) {
    fail(ErrorCode::unsupported, "noise scale undefined for lambda <= 0 with sigma > 0");
  }

  const double a = std::exp(-params.lambda * dt);
  const double noise_sd =
      params.sigma > 0.0
          ? params.sigma * std::sqrt(-std::expm1(-2.0 * params.lambda * dt) / (2.0 * params.lambda))
          : 0.0;

  Rng rng(seed);
  std::vector<double> values;
  values.reserve(steps + 1);
  values.push_back(theta0);
  double theta = theta0;
  for (std::size_t t = 0; t < steps; ++t) {
    // μ + a(θ − μ) keeps θ = μ an exact fixed point in floating point.
    theta = params.mu + a * (theta - params.mu);
    if (noise_sd > 0.0) theta += noise_sd * rng.normal();
    values.push_back(theta);
  }
  return Trajectory(std::move(values), dt);
}

OuEstimate fit_ou_ls(const Trajectory& traj) {
  if (traj.size() < 3) {
    fail(ErrorCode::insufficient_data, "fit_ou_ls needs at least 3 points");
  }
  const auto& v = traj.values();
  const std::size_t n = v.size() - 1;

  double mean_x = 0.0;
  double mean_y = 0.0;
  double max_abs = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    mean_x += v[t];
    mean_y += v[t + 1];
    max_abs = std::max(max_abs, std::abs(v[t]));
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);

  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double dx = v[t] - mean_x;
    sxx += dx * dx;
    sxy += dx * (v[t + 1] - mean_y);
  }

  OuEstimate est;
  est.dt = traj.dt();
  est.fit.n_points = n;

  const double tiny = 16.0 * std::numeric_limits<double>::epsilon() * max_abs;
  if (sxx <= static_cast<double>(n) * tiny * tiny) {
    est.fit.degenerate = true;
    est.fit.a = std::numeric_limits<double>::quiet_NaN();
    est.fit.b = std::numeric_limits<double>::quiet_NaN();
    est.status = FitStatus::degenerate;
    return est;
  }

  const double a = sxy / sxx;
  const double b = mean_y - a * mean_x;
  double ssr = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double r = v[t + 1] - (a * v[t] + b);
    ssr += r * r;
  }
  // Two pairs determine the line exactly; there are no residual degrees of freedom.
  const double resid_sd = n > 2 ? std::sqrt(ssr / static_cast<double>(n - 2)) : 0.0;

  est.fit.a = a;
  est.fit.b = b;
  est.fit.resid_sd = resid_sd;

  if (a <= 0.0) {
    est.status = FitStatus::degenerate;
  } else if (a >= 1.0) {
    est.status = FitStatus::non_reverting;
  } else {
    est.status = FitStatus::ok;
    const double dt = traj.dt();
    const double log_a = std::log(a);
    OUParams p;
    p.lambda = -log_a / dt;
    p.mu = b / (1.0 - a);
    p.sigma = resid_sd * std::sqrt(-2.0 * log_a / (dt * (1.0 - a * a)));
    est.params = p;
  }
  return est;
}

std::optional<OUParams> decode_params(const OuEstimate& est) {
  if (est.status == FitStatus::ok) return est.params;
  if (est.fit.degenerate || est.status == FitStatus::non_reverting) return std::nullopt;
  const double a = std::max(est.fit.a, kMinSlope);
  const double log_a = std::log(a);
  OUParams p;
  p.lambda = -log_a / est.dt;
  p.mu = est.fit.b / (1.0 - a);
  p.sigma = est.fit.resid_sd * std::sqrt(-2.0 * log_a / (est.dt * (1.0 - a * a)));
  return p;
}

double decode(double theta_ref, const OUParams& params, double elapsed) {
  require(std::isfinite(theta_ref) && std::isfinite(params.lambda) && std::isfinite(params.mu) &&
              !std::isnan(elapsed),
          ErrorCode::invalid_argument, "decode inputs must be finite");
  require(elapsed >= 0.0, ErrorCode::invalid_argument, "decode requires elapsed >= 0");
  if (elapsed == 0.0) return theta_ref;
  // Same form as the simulation step: exact at θ = μ and monotone in w under rounding.
  const double w = std::exp(-params.lambda * elapsed);
  return params.mu + w * (theta_ref - params.mu);
}

double band_fraction(std::span<const double> finals, std::span<const OuEstimate> fits) {
  require(!finals.empty(), ErrorCode::invalid_argument, "band_fraction needs at least one coordinate");
  require(finals.size() == fits.size(), ErrorCode::invalid_argument,
          "band_fraction: finals and fits differ in length");
  std::size_t outside = 0;
  for (std::size_t i = 0; i < finals.size(); ++i) {
    const auto& f = fits[i];
    switch (f.status) {
      case FitStatus::degenerate:
        break;
      case FitStatus::non_reverting:
        ++outside;
        break;
      case FitStatus::ok: {
        const double band = f.params->stationary_sd();
        if (finals[i] > f.params->mu + band || finals[i] < f.params->mu - band) ++outside;
        break;
      }
    }
  }
  return static_cast<double>(outside) / static_cast<double>(finals.size());
}

}  // namespace fedsample::ou
