#include "fedsample/policies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>
#include <sstream>

#include "fedsample/error.hpp"

namespace fedsample::policy {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double require_stat(const std::optional<double>& v, const char* what) {
  if (!v) fail(ErrorCode::invalid_argument, std::string("policy requires ") + what);
  return *v;
}

}  // namespace

void validate(const PolicyConfig& policy) {
  std::visit(overloaded{
                 [](const Full&) {},
                 [](const Random& p) {
                   require(p.q >= 0.0 && p.q <= 1.0, ErrorCode::invalid_argument, "Random q must be in [0,1]");
                 },
                 [](const FixedThreshold& p) {
                   require(!std::isnan(p.gamma) && p.gamma >= 0.0, ErrorCode::invalid_argument,
                           "FT gamma must be >= 0");
                 },
                 [](const AdaptiveThreshold&) {},
                 [](const OuFraction& p) {
                   require(p.r >= 0.0 && p.r <= 1.0, ErrorCode::invalid_argument, "OU r must be in [0,1]");
                 },
                 [](const AdaptiveOu&) {},
             },
             policy);
}

std::string label(const PolicyConfig& policy) {
  return std::visit(overloaded{
                        [](const Full&) -> std::string { return "Full"; },
                        [](const Random& p) { return "Random(q=" + format_number(p.q) + ")"; },
                        [](const FixedThreshold& p) { return "FT(gamma=" + format_number(p.gamma) + ")"; },
                        [](const AdaptiveThreshold&) -> std::string { return "AT"; },
                        [](const OuFraction& p) { return "OU(r=" + format_number(p.r) + ")"; },
                        [](const AdaptiveOu&) -> std::string { return "AOU"; },
                    },
                    policy);
}

PolicyConfig parse_label(const std::string& text) {
  if (text == "Full") return Full{};
  if (text == "AT") return AdaptiveThreshold{};
  if (text == "AOU") return AdaptiveOu{};
  static const std::regex re(R"((Random|FT|OU)\((q|gamma|r)=([^)]+)\))");
  std::smatch m;
  if (std::regex_match(text, m, re)) {
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(m[3].str(), &used);
      if (used != static_cast<std::size_t>(m[3].length())) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_argument, "bad policy parameter in '" + text + "'");
    }
    PolicyConfig out;
    if (m[1] == "Random" && m[2] == "q") out = Random{v};
    else if (m[1] == "FT" && m[2] == "gamma") out = FixedThreshold{v};
    else if (m[1] == "OU" && m[2] == "r") out = OuFraction{v};
    else fail(ErrorCode::invalid_argument, "unknown policy '" + text + "'");
    validate(out);
    return out;
  }
  fail(ErrorCode::invalid_argument, "unknown policy '" + text + "'");
}

bool needs_adaptive_threshold(const PolicyConfig& policy) noexcept {
  return std::holds_alternative<AdaptiveThreshold>(policy) || std::holds_alternative<AdaptiveOu>(policy);
}

bool needs_band_fraction(const PolicyConfig& policy) noexcept {
  return std::holds_alternative<OuFraction>(policy) || std::holds_alternative<AdaptiveOu>(policy);
}

std::optional<double> static_threshold(const PolicyConfig& policy) noexcept {
  if (const auto* ft = std::get_if<FixedThreshold>(&policy)) return ft->gamma;
  if (const auto* ou = std::get_if<OuFraction>(&policy)) return ou->r;
  return std::nullopt;
}

double compute_adaptive_threshold(std::span<const double> scalars) {
  require(!scalars.empty(), ErrorCode::invalid_argument, "adaptive threshold needs at least one value");
  double sum = 0.0;
  for (double v : scalars) {
    require(std::isfinite(v), ErrorCode::invalid_argument, "adaptive threshold input must be finite");
    sum += v;
  }
  // All-equal input must return that value exactly (sum / n can be off by an ulp).
  const auto [lo, hi] = std::minmax_element(scalars.begin(), scalars.end());
  if (*lo == *hi) return *lo;
  const double n = static_cast<double>(scalars.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : scalars) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  const double gamma = mean - sd;

  // Two-point data with equal counts (any pair, for instance) puts γ exactly on the lower value.
  // Rounding would then decide that tie at random; snap to the reported value so it stays a tie.
  const double tol = 8.0 * std::numeric_limits<double>::epsilon() * (std::abs(mean) + sd);
  const auto nearest = std::min_element(scalars.begin(), scalars.end(), [&](double a, double b) {
    return std::abs(a - gamma) < std::abs(b - gamma);
  });
  return std::abs(*nearest - gamma) <= tol ? *nearest : gamma;
}

bool local_decide(const PolicyConfig& policy, const ClientStats& stats,
                  std::optional<double> broadcast_threshold, Rng& rng) {
  return std::visit(
      overloaded{
          [](const Full&) { return true; },
          [&](const Random& p) { return rng.uniform() < 1.0 - p.q; },
          [&](const FixedThreshold& p) { return require_stat(stats.update_norm, "update_norm") > p.gamma; },
          [&](const AdaptiveThreshold&) {
            const double norm = require_stat(stats.update_norm, "update_norm");
            return norm > require_stat(broadcast_threshold, "a broadcast threshold");
          },
          [&](const OuFraction& p) { return require_stat(stats.band_fraction, "band_fraction") > p.r; },
          [&](const AdaptiveOu&) {
            const double frac = require_stat(stats.band_fraction, "band_fraction");
            return frac > require_stat(broadcast_threshold, "a broadcast threshold");
          },
      },
      policy);
}

}  // namespace fedsample::policy
