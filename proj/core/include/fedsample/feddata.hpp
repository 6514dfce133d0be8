#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedsample/learner.hpp"

namespace fedsample {

/// Per-client training data plus a shared held-out test set.
struct FederatedDataset {
  std::vector<std::string> client_ids;
  std::vector<Samples> clients;
  Samples test_set;
  std::size_t n_classes = 0;
  std::size_t dim = 0;

  std::size_t n_clients() const noexcept { return clients.size(); }
  std::size_t total_samples() const noexcept;
  /// Throws invalid-argument when any invariant (non-empty clients, label range,
  /// uniform feature dimension) is violated.
  void validate() const;
};

struct BlobsOptions {
  std::size_t n_classes = 10;
  std::size_t dim = 20;
  std::size_t n_clients = 100;
  std::size_t samples_per_client = 50;
  std::size_t shards_per_client = 2;
  std::uint64_t seed = 0;
};

/// Unit-variance Gaussian class clusters whose means lie on a radius-3 sphere,
/// partitioned by shard dealing so each client sees at most shards_per_client
/// labels. The iid test set holds max(1000, 100·n_classes) samples.
FederatedDataset synth_blobs(const BlobsOptions& options);

/// Per-client label entropy (nats), averaged over clients.
double mean_label_entropy(const FederatedDataset& dataset);

struct CsvSchema {
  std::size_t n_classes = 0;
  /// Rows with this client_id form the test set instead of a client.
  std::string test_client_id = "test";
};

/// Reads `client_id,label,f_0,...,f_{dim-1}` rows (header required). Clients
/// appear in order of first occurrence. Throws parse-error with the line
/// number on malformed rows, invalid-argument for an empty file.
FederatedDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Writes the dataset in the load_csv format with round-trip precision.
void export_csv(const FederatedDataset& dataset, const std::filesystem::path& path,
                const CsvSchema& schema = {});

}  // namespace fedsample
