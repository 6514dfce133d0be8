#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "fedsample/engine.hpp"
#include "fedsample/feddata.hpp"
#include "fedsample/learner.hpp"

namespace fedsample {

struct BlobsSource {
  BlobsOptions options;
  bool seed_from_run = true;  ///< no explicit dataset seed: use the run seed
};

struct CsvSource {
  std::filesystem::path path;
  CsvSchema schema;
};

using DatasetSource = std::variant<BlobsSource, CsvSource>;

/// A parsed experiment configuration document.
///
/// JSON keys: dataset, model, K, C, E, B, eta, rounds, policy, seed (required);
/// nack_estimate_mode, track_coordinates, history_rounds (optional). Unknown
/// keys are rejected at every level.
struct ExperimentConfig {
  DatasetSource dataset;
  ModelSpec model;  ///< input_dim / n_classes of 0 are filled from the dataset
  RoundConfig round;
  std::size_t rounds = 1;
  std::string raw;  ///< exact document bytes

  /// Replaces the run seed (and the dataset seed when it follows the run seed).
  void override_seed(std::uint64_t seed);
};

/// Throws Error(parse_error) naming the line/column for malformed JSON or the
/// offending field for schema violations. Relative CSV paths resolve against base_dir.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

FederatedDataset materialize_dataset(const ExperimentConfig& config);

/// Fills input_dim / n_classes from the dataset and checks consistency.
ModelSpec resolve_model(const ModelSpec& model, const FederatedDataset& dataset);

}  // namespace fedsample
