#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedsample/error.hpp"
#include "fedsample/ou.hpp"

using namespace fedsample;
using namespace fedsample::ou;

namespace {

ErrorCode code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::internal_error;
}

}  // namespace

TEST(SimulateOu, NoiselessGeometricDecay) {
  const auto traj = simulate_ou({std::log(2.0), 0.0, 0.0}, 1.0, 1.0, 3, 7);
  ASSERT_EQ(traj.size(), 4u);
  EXPECT_DOUBLE_EQ(traj[0], 1.0);
  EXPECT_DOUBLE_EQ(traj[1], 0.5);
  EXPECT_DOUBLE_EQ(traj[2], 0.25);
  EXPECT_DOUBLE_EQ(traj[3], 0.125);
}

TEST(SimulateOu, FixedPointStaysConstant) {
  for (double lambda : {0.1, 1.0, 7.5}) {
    const auto traj = simulate_ou({lambda, 2.5, 0.0}, 2.5, 0.3, 50, 1);
    for (double v : traj.values()) EXPECT_EQ(v, 2.5);
  }
}

TEST(SimulateOu, StationaryMoments) {
  const auto traj = simulate_ou({1.0, 0.5, 0.2}, 0.0, 0.01, 100000, 11);
  const auto& v = traj.values();
  const std::size_t half = v.size() / 2;
  const std::size_t n = v.size() - half;
  double mean = 0.0;
  for (std::size_t i = half; i < v.size(); ++i) mean += v[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = half; i < v.size(); ++i) var += (v[i] - mean) * (v[i] - mean);
  var /= static_cast<double>(n - 1);

  // Autocorrelated samples: the standard error uses the integrated autocorrelation time 2/(λ dt).
  const double stationary_var = 0.02;
  const double n_eff = static_cast<double>(n) * 0.01 / 2.0;
  EXPECT_NEAR(mean, 0.5, 3.0 * std::sqrt(stationary_var / n_eff));
  EXPECT_NEAR(var, stationary_var, 0.1 * stationary_var);
}

TEST(SimulateOu, BitReproducible) {
  const OUParams p{1.3, -0.4, 0.7};
  EXPECT_EQ(simulate_ou(p, 0.2, 0.05, 5000, 99).values(), simulate_ou(p, 0.2, 0.05, 5000, 99).values());
  EXPECT_NE(simulate_ou(p, 0.2, 0.05, 5000, 99).values(), simulate_ou(p, 0.2, 0.05, 5000, 100).values());
}

TEST(SimulateOu, Errors) {
  EXPECT_EQ(code_of([] { simulate_ou({-1.0, 0.0, 0.5}, 0.0, 1.0, 3, 0); }), ErrorCode::unsupported);
  EXPECT_EQ(code_of([] { simulate_ou({1.0, 0.0, 0.5}, NAN, 1.0, 3, 0); }), ErrorCode::invalid_argument);
  EXPECT_EQ(code_of([] { simulate_ou({1.0, 0.0, 0.5}, 0.0, 0.0, 3, 0); }), ErrorCode::invalid_argument);
  EXPECT_NO_THROW(simulate_ou({-1.0, 0.0, 0.0}, 1.0, 1.0, 3, 0));
  EXPECT_EQ(simulate_ou({1.0, 0.0, 0.5}, 1.0, 1.0, 0, 0).size(), 1u);
}

TEST(FitOuLs, NoiselessSequence) {
  const auto est = fit_ou_ls(Trajectory({1, 0.5, 0.25, 0.125, 0.0625}, 1.0));
  ASSERT_EQ(est.status, FitStatus::ok);
  EXPECT_NEAR(est.fit.a, 0.5, 1e-15);
  EXPECT_NEAR(est.fit.b, 0.0, 1e-15);
  EXPECT_NEAR(est.fit.resid_sd, 0.0, 1e-15);
  EXPECT_EQ(est.fit.n_points, 4u);
  EXPECT_NEAR(est.params->lambda, std::log(2.0), 1e-14);
  EXPECT_NEAR(est.params->mu, 0.0, 1e-14);
}

TEST(FitOuLs, ConstantSequenceIsDegenerate) {
  const auto est = fit_ou_ls(Trajectory({2, 2, 2, 2}, 1.0));
  EXPECT_TRUE(est.fit.degenerate);
  EXPECT_EQ(est.status, FitStatus::degenerate);
  EXPECT_FALSE(est.params.has_value());
}

TEST(FitOuLs, NonRevertingAndNegativeSlope) {
  const auto growing = fit_ou_ls(Trajectory({1, 2, 4, 8, 16}, 1.0));
  EXPECT_EQ(growing.status, FitStatus::non_reverting);
  EXPECT_FALSE(growing.params.has_value());

  const auto alternating = fit_ou_ls(Trajectory({1, -1, 1, -1, 1}, 1.0));
  EXPECT_EQ(alternating.status, FitStatus::degenerate);
  EXPECT_FALSE(alternating.params.has_value());
  // The decode path clamps the slope instead of producing NaN.
  const auto decoded = decode_params(alternating);
  ASSERT_TRUE(decoded.has_value());
  EXPECT_TRUE(std::isfinite(decoded->lambda));
  EXPECT_NEAR(decoded->lambda, -std::log(kMinSlope), 1e-9);
}

TEST(FitOuLs, TooShort) {
  EXPECT_EQ(code_of([] { fit_ou_ls(Trajectory({1.0, 2.0}, 1.0)); }), ErrorCode::insufficient_data);
}

TEST(FitOuLs, RoundTripDefaultExample) {
  int passed = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto est = fit_ou_ls(simulate_ou({1.0, 0.5, 0.2}, 0.0, 0.01, 100000, seed));
    if (est.status != FitStatus::ok) continue;
    const auto& p = *est.params;
    if (std::abs(p.lambda - 1.0) <= 0.1 && std::abs(p.mu - 0.5) <= 0.02 && std::abs(p.sigma - 0.2) <= 0.02) ++passed;
  }
  EXPECT_GE(passed, 9);
}

TEST(FitOuLs, AffineEquivariance) {
  const auto base = simulate_ou({0.8, 0.3, 0.4}, 1.0, 0.1, 3000, 5);
  for (double c : {-3.0, 0.25, 10.0}) {
    std::vector<double> shifted = base.values();
    for (double& v : shifted) v += c;
    const auto e0 = fit_ou_ls(base);
    const auto e1 = fit_ou_ls(Trajectory(shifted, base.dt()));
    ASSERT_EQ(e1.status, FitStatus::ok);
    EXPECT_NEAR(e1.params->mu, e0.params->mu + c, 1e-9);
    EXPECT_NEAR(e1.params->lambda, e0.params->lambda, 1e-9);
    EXPECT_NEAR(e1.params->sigma, e0.params->sigma, 1e-9);
  }
}

TEST(Decode, Examples) {
  const OUParams p{std::log(2.0), 0.0, 1.0};
  EXPECT_EQ(decode(1.7, p, 0.0), 1.7);
  EXPECT_DOUBLE_EQ(decode(1.0, p, 1.0), 0.5);
  EXPECT_NEAR(decode(5.0, {1.0, -2.0, 0.3}, 1e6), -2.0, 1e-12);
}

TEST(Decode, MonotoneTowardMean) {
  const OUParams p{0.7, 1.5, 0.2};
  for (double theta : {-4.0, 1.5, 3.0}) {
    double prev = std::abs(decode(theta, p, 0.0) - p.mu);
    for (double t = 0.1; t < 30.0; t += 0.1) {
      const double cur = std::abs(decode(theta, p, t) - p.mu);
      EXPECT_LE(cur, prev);
      prev = cur;
    }
  }
}

TEST(BandFraction, Examples) {
  const auto make = [](double lambda, double mu, double sigma) {
    OuEstimate e;
    e.status = FitStatus::ok;
    e.params = OUParams{lambda, mu, sigma};
    return e;
  };
  std::vector<OuEstimate> fits{make(1, 0, 1), make(2, 1, 1), make(0.5, -1, 2), make(1, 3, 0.5)};
  std::vector<double> at_mean{0, 1, -1, 3};
  EXPECT_EQ(band_fraction(at_mean, fits), 0.0);

  std::vector<double> far;
  for (const auto& f : fits) far.push_back(f.params->mu + 10 * f.params->stationary_sd());
  EXPECT_EQ(band_fraction(far, fits), 1.0);

  std::vector<double> one_out = at_mean;
  one_out[2] = -1 - 3 * fits[2].params->stationary_sd();
  EXPECT_EQ(band_fraction(one_out, fits), 0.25);
}

TEST(BandFraction, DegenerateInsideNonRevertingOutside) {
  OuEstimate degenerate;  // default status is degenerate
  OuEstimate non_reverting;
  non_reverting.status = FitStatus::non_reverting;
  std::vector<OuEstimate> fits{degenerate, non_reverting};
  std::vector<double> finals{100.0, 0.0};
  EXPECT_EQ(band_fraction(finals, fits), 0.5);
}

TEST(BandFraction, Errors) {
  EXPECT_EQ(code_of([] { band_fraction({}, {}); }), ErrorCode::invalid_argument);
  std::vector<double> one{1.0};
  std::vector<OuEstimate> two(2);
  EXPECT_EQ(code_of([&] { band_fraction(one, two); }), ErrorCode::invalid_argument);
}
