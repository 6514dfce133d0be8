#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace fedsample::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kInvalidConfig = 2,
  kNumericError = 3,
};

struct CommonOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed_override;
  bool quiet = false;
  std::size_t threads = 1;
};

/// Worker cap from FEDSAMPLE_THREADS, falling back to the hardware concurrency.
std::size_t thread_cap_from_env();

/// Stable id for a run: FNV-1a over the config bytes and the effective seed.
std::string run_id(const std::string& config_bytes, std::uint64_t seed);

/// Writes metrics.csv and manifest.json into out.
int cmd_run(const CommonOptions& opts, std::ostream& log);

struct SweepOptions {
  CommonOptions common;
  /// JSON: {"policies": [{"kind": "FT", "gamma": 0.5} | "FT(gamma=0.5)", ...], "seeds": [1, 2]}.
  /// Seeds default to the config seed.
  std::filesystem::path grid;
};

/// One metrics CSV per (policy, seed) cell plus summary.csv and manifest.json.
int cmd_sweep(const SweepOptions& opts, std::ostream& log);

struct OuDemoOptions {
  CommonOptions common;
  double burn_in = 0.5;            ///< leading fraction of SGD steps excluded from the fits
  std::size_t lag = 1;             ///< increment interval in steps
  std::size_t bins = 30;
  std::size_t histogram_coords = 16;
};

/// Central SGD with trajectory tracking, per-coordinate OU fits, and CSV exports
/// (trajectories.csv, increments.csv, fits.csv, summary.json).
int cmd_ou_demo(const OuDemoOptions& opts, std::ostream& log);

/// Writes the configured dataset in the client_id,label,f_* CSV format.
int cmd_export_dataset(const CommonOptions& opts, std::ostream& log);

}  // namespace fedsample::cli
