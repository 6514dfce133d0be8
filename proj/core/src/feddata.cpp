#include "fedsample/feddata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string_view>
#include <unordered_map>

#include "fedsample/error.hpp"
#include "fedsample/rng.hpp"

namespace fedsample {

std::size_t FederatedDataset::total_samples() const noexcept {
  std::size_t total = 0;
  for (const auto& c : clients) total += c.size();
  return total;
}

void FederatedDataset::validate() const {
  require(!clients.empty(), ErrorCode::invalid_argument, "dataset has no clients");
  require(client_ids.size() == clients.size(), ErrorCode::invalid_argument,
          "dataset client id list does not match client count");
  require(dim >= 1, ErrorCode::invalid_argument, "dataset dim must be >= 1");
  auto check = [&](const Samples& s, bool allow_empty) {
    require(allow_empty || s.size() > 0, ErrorCode::invalid_argument, "dataset client is empty");
    require(s.features.cols == dim || s.size() == 0, ErrorCode::invalid_argument,
            "feature dimension is not uniform across the dataset");
    require(s.features.rows == s.labels.size() && s.features.data.size() == s.features.rows * s.features.cols,
            ErrorCode::invalid_argument, "feature matrix does not match label count");
    for (int y : s.labels) {
      require(y >= 0 && static_cast<std::size_t>(y) < n_classes, ErrorCode::invalid_argument,
              "label out of range");
    }
  };
  for (const auto& c : clients) check(c, false);
  check(test_set, true);
}

namespace {

void append_sample(Samples& s, std::span<const double> mean, int label, Rng& rng) {
  for (double m : mean) s.features.data.push_back(m + rng.normal());
  s.labels.push_back(label);
  ++s.features.rows;
}

}  // namespace

FederatedDataset synth_blobs(const BlobsOptions& o) {
  require(o.n_classes >= 1 && o.dim >= 1 && o.n_clients >= 1 && o.samples_per_client >= 1 &&
              o.shards_per_client >= 1,
          ErrorCode::invalid_argument, "synth_blobs counts must all be >= 1");
  require(o.shards_per_client <= o.n_classes, ErrorCode::invalid_argument,
          "shards_per_client must not exceed n_classes");

  Rng rng(derive_seed(o.seed, {stream::data}));

  constexpr double kRadius = 3.0;
  std::vector<std::vector<double>> means(o.n_classes, std::vector<double>(o.dim));
  for (auto& m : means) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : m) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& v : m) v *= kRadius / norm;
  }

  // Shards follow the sorted label order, so shard j holds class j·C/S.
  const std::size_t n_shards = o.n_clients * o.shards_per_client;
  std::vector<std::size_t> deal(n_shards);
  std::iota(deal.begin(), deal.end(), std::size_t{0});
  for (std::size_t i = n_shards; i > 1; --i) std::swap(deal[i - 1], deal[rng.below(i)]);

  FederatedDataset ds;
  ds.n_classes = o.n_classes;
  ds.dim = o.dim;
  ds.clients.resize(o.n_clients);
  ds.client_ids.resize(o.n_clients);
  for (std::size_t k = 0; k < o.n_clients; ++k) {
    ds.client_ids[k] = std::to_string(k);
    Samples& s = ds.clients[k];
    s.features.cols = o.dim;
    s.features.data.reserve(o.samples_per_client * o.dim);
    const std::size_t base = o.samples_per_client / o.shards_per_client;
    const std::size_t extra = o.samples_per_client % o.shards_per_client;
    for (std::size_t j = 0; j < o.shards_per_client; ++j) {
      const std::size_t shard = deal[k * o.shards_per_client + j];
      const auto label = static_cast<int>(shard * o.n_classes / n_shards);
      const std::size_t count = base + (j < extra ? 1 : 0);
      for (std::size_t i = 0; i < count; ++i) append_sample(s, means[static_cast<std::size_t>(label)], label, rng);
    }
  }

  const std::size_t n_test = std::max<std::size_t>(1000, 100 * o.n_classes);
  ds.test_set.features.cols = o.dim;
  ds.test_set.features.data.reserve(n_test * o.dim);
  for (std::size_t i = 0; i < n_test; ++i) {
    const auto label = static_cast<int>(rng.below(o.n_classes));
    append_sample(ds.test_set, means[static_cast<std::size_t>(label)], label, rng);
  }
  return ds;
}

double mean_label_entropy(const FederatedDataset& dataset) {
  double total = 0.0;
  std::vector<std::size_t> counts(dataset.n_classes);
  for (const auto& c : dataset.clients) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int y : c.labels) ++counts[static_cast<std::size_t>(y)];
    double h = 0.0;
    for (auto n : counts) {
      if (n == 0) continue;
      const double p = static_cast<double>(n) / static_cast<double>(c.size());
      h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(dataset.clients.size());
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  fail(ErrorCode::parse_error, "line " + std::to_string(line_no) + ": " + what);
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

FederatedDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  require(schema.n_classes >= 1, ErrorCode::invalid_argument, "csv schema n_classes must be >= 1");
  std::ifstream in(path);
  if (!in) fail(ErrorCode::invalid_argument, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line) || trim_cr(line).empty()) {
    fail(ErrorCode::invalid_argument, path.string() + " is empty");
  }
  const auto header = split_commas(trim_cr(line));
  if (header.size() < 3 || header[0] != "client_id" || header[1] != "label") {
    parse_fail(1, "header must be client_id,label,f_0,...");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t i = 0; i < dim; ++i) {
    if (header[i + 2] != "f_" + std::to_string(i)) parse_fail(1, "expected column f_" + std::to_string(i));
  }

  FederatedDataset ds;
  ds.n_classes = schema.n_classes;
  ds.dim = dim;
  ds.test_set.features.cols = dim;
  std::unordered_map<std::string, std::size_t> index;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim_cr(line);
    if (text.empty()) continue;
    const auto fields = split_commas(text);
    if (fields.size() != dim + 2) {
      parse_fail(line_no, "expected " + std::to_string(dim + 2) + " fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) parse_fail(line_no, "empty client_id");

    int label = 0;
    {
      const auto f = fields[1];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
      if (ec != std::errc() || ptr != f.data() + f.size()) parse_fail(line_no, "bad label '" + std::string(f) + "'");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= schema.n_classes) {
      parse_fail(line_no, "label " + std::to_string(label) + " outside [0, " + std::to_string(schema.n_classes) + ")");
    }

    Samples* target = nullptr;
    const std::string id(fields[0]);
    if (id == schema.test_client_id) {
      target = &ds.test_set;
    } else {
      auto [it, inserted] = index.try_emplace(id, ds.clients.size());
      if (inserted) {
        ds.client_ids.push_back(id);
        ds.clients.emplace_back();
        ds.clients.back().features.cols = dim;
      }
      target = &ds.clients[it->second];
    }

    for (std::size_t i = 0; i < dim; ++i) {
      const auto f = fields[i + 2];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        parse_fail(line_no, "bad feature f_" + std::to_string(i) + " '" + std::string(f) + "'");
      }
      target->features.data.push_back(v);
    }
    ++target->features.rows;
    target->labels.push_back(label);
  }
  if (ds.clients.empty()) {
    fail(ErrorCode::invalid_argument, path.string() + " has no client rows");
  }
  ds.validate();
  return ds;
}

void export_csv(const FederatedDataset& dataset, const std::filesystem::path& path, const CsvSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::invalid_argument, "cannot write " + path.string());
  out << "client_id,label";
  for (std::size_t i = 0; i < dataset.dim; ++i) out << ",f_" << i;
  out << '\n';
  char buf[64];
  auto write_rows = [&](const std::string& id, const Samples& s) {
    for (std::size_t r = 0; r < s.size(); ++r) {
      out << id << ',' << s.labels[r];
      for (double v : s.features.row(r)) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
      }
      out << '\n';
    }
  };
  for (std::size_t k = 0; k < dataset.clients.size(); ++k) write_rows(dataset.client_ids[k], dataset.clients[k]);
  write_rows(schema.test_client_id, dataset.test_set);
  if (!out) fail(ErrorCode::invalid_argument, "failed writing " + path.string());
}

}  // namespace fedsample
