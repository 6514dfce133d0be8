#include "fedsample/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <sstream>

#include "fedsample/error.hpp"

namespace fedsample {
namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  fail(ErrorCode::parse_error, "field '" + field + "': " + what);
}

// Wraps one JSON object level, tracking the dotted field path for diagnostics.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::initializer_list<const char*> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) field_error(path_.empty() ? "<root>" : path_, "expected an object");
    for (const auto& [key, _] : j_.items()) {
      const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
      if (!known) field_error(name(key), "unknown key");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const char* key) const { return j_.contains(key); }

  const json& at(const char* key) const {
    if (!j_.contains(key)) field_error(name(key), "missing required key");
    return j_.at(key);
  }

  std::uint64_t get_uint(const char* key) const {
    const auto& v = at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      field_error(name(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::uint64_t get_uint(const char* key, std::uint64_t fallback) const {
    return has(key) ? get_uint(key) : fallback;
  }

  double get_double(const char* key) const {
    const auto& v = at(key);
    if (!v.is_number()) field_error(name(key), "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) field_error(name(key), "expected a finite number");
    return d;
  }

  std::string get_string(const char* key) const {
    const auto& v = at(key);
    if (!v.is_string()) field_error(name(key), "expected a string");
    return v.get<std::string>();
  }

 private:
  const json& j_;
  std::string path_;
};

// Converts a byte offset into "line L, column C".
std::string position_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

DatasetSource parse_dataset(const json& j, const std::filesystem::path& base_dir) {
  const ObjectReader kind_probe(j, "dataset",
                                {"kind", "n_classes", "dim", "n_clients", "samples_per_client", "shards_per_client",
                                 "seed", "path", "test_client_id"});
  const std::string kind = kind_probe.get_string("kind");
  if (kind == "synth_blobs") {
    const ObjectReader r(j, "dataset",
                         {"kind", "n_classes", "dim", "n_clients", "samples_per_client", "shards_per_client", "seed"});
    BlobsSource src;
    auto& o = src.options;
    o.n_classes = r.get_uint("n_classes");
    o.dim = r.get_uint("dim");
    o.n_clients = r.get_uint("n_clients");
    o.samples_per_client = r.get_uint("samples_per_client");
    o.shards_per_client = r.get_uint("shards_per_client");
    if (r.has("seed")) {
      o.seed = r.get_uint("seed");
      src.seed_from_run = false;
    }
    if (o.n_classes < 1 || o.dim < 1 || o.n_clients < 1 || o.samples_per_client < 1 || o.shards_per_client < 1) {
      field_error("dataset", "all counts must be >= 1");
    }
    if (o.shards_per_client > o.n_classes) field_error("dataset.shards_per_client", "must not exceed n_classes");
    return src;
  }
  if (kind == "csv") {
    const ObjectReader r(j, "dataset", {"kind", "path", "n_classes", "test_client_id"});
    CsvSource src;
    src.path = r.get_string("path");
    if (src.path.is_relative() && !base_dir.empty()) src.path = base_dir / src.path;
    src.schema.n_classes = r.get_uint("n_classes");
    if (src.schema.n_classes < 1) field_error("dataset.n_classes", "must be >= 1");
    if (r.has("test_client_id")) src.schema.test_client_id = r.get_string("test_client_id");
    return src;
  }
  field_error("dataset.kind", "expected 'synth_blobs' or 'csv', got '" + kind + "'");
}

ModelSpec parse_model(const json& j) {
  const ObjectReader r(j, "model", {"kind", "input_dim", "hidden_dim", "n_classes"});
  ModelSpec spec;
  try {
    spec.kind = parse_model_kind(r.get_string("kind"));
  } catch (const Error& e) {
    field_error("model.kind", e.what());
  }
  spec.input_dim = r.get_uint("input_dim", 0);
  spec.n_classes = r.get_uint("n_classes", 0);
  spec.hidden_dim = r.get_uint("hidden_dim", 0);
  if (spec.kind == ModelKind::mlp1 && spec.hidden_dim < 1) field_error("model.hidden_dim", "mlp1 needs hidden_dim >= 1");
  return spec;
}

policy::PolicyConfig parse_policy(const json& j) {
  const ObjectReader probe(j, "policy", {"kind", "gamma", "q", "r"});
  const std::string kind = probe.get_string("kind");
  policy::PolicyConfig p;
  if (kind == "Full") {
    const ObjectReader strict(j, "policy", {"kind"});
    p = policy::Full{};
  } else if (kind == "Random") {
    const ObjectReader r(j, "policy", {"kind", "q"});
    const double q = r.get_double("q");
    if (q < 0.0 || q > 1.0) field_error("policy.q", "must be in [0, 1]");
    p = policy::Random{q};
  } else if (kind == "FT") {
    const ObjectReader r(j, "policy", {"kind", "gamma"});
    const double g = r.get_double("gamma");
    if (g < 0.0) field_error("policy.gamma", "must be >= 0");
    p = policy::FixedThreshold{g};
  } else if (kind == "AT") {
    const ObjectReader strict(j, "policy", {"kind"});
    p = policy::AdaptiveThreshold{};
  } else if (kind == "OU") {
    const ObjectReader r(j, "policy", {"kind", "r"});
    const double v = r.get_double("r");
    if (v < 0.0 || v > 1.0) field_error("policy.r", "must be in [0, 1]");
    p = policy::OuFraction{v};
  } else if (kind == "AOU") {
    const ObjectReader strict(j, "policy", {"kind"});
    p = policy::AdaptiveOu{};
  } else {
    field_error("policy.kind", "expected one of Full, Random, FT, AT, OU, AOU; got '" + kind + "'");
  }
  return p;
}

TrackSpec parse_track(const json& j, std::uint64_t seed) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "all") return TrackSpec::all();
    if (s == "auto") return TrackSpec::none();  // resolved against the parameter count by the engine
    field_error("track_coordinates", "expected 'all', 'auto' or a positive integer");
  }
  if (j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() > 0)) {
    const auto n = j.get<std::uint64_t>();
    if (n == 0) field_error("track_coordinates", "must be positive");
    return TrackSpec::subsample(n, seed);
  }
  field_error("track_coordinates", "expected 'all', 'auto' or a positive integer");
}

}  // namespace

void ExperimentConfig::override_seed(std::uint64_t seed) {
  round.seed = seed;
  if (round.track.mode == TrackSpec::Mode::subsample) round.track.seed = seed;
  if (auto* blobs = std::get_if<BlobsSource>(&dataset); blobs && blobs->seed_from_run) blobs->options.seed = seed;
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
    fail(ErrorCode::parse_error, "malformed JSON at " + position_of(text, at) + ": " + e.what());
  }

  const ObjectReader r(j, "",
                       {"dataset", "model", "K", "C", "E", "B", "eta", "rounds", "policy", "nack_estimate_mode",
                        "seed", "track_coordinates", "history_rounds"});
  ExperimentConfig cfg;
  cfg.raw = std::string(text);
  cfg.dataset = parse_dataset(r.at("dataset"), base_dir);
  cfg.model = parse_model(r.at("model"));

  auto& rc = cfg.round;
  rc.K = r.get_uint("K");
  if (rc.K < 1) field_error("K", "must be >= 1");
  rc.C = r.get_double("C");
  if (!(rc.C > 0.0 && rc.C <= 1.0)) field_error("C", "must be in (0, 1]");
  rc.E = r.get_uint("E");
  rc.B = r.get_uint("B");
  if (rc.B < 1) field_error("B", "must be >= 1");
  rc.eta = r.get_double("eta");
  if (rc.eta < 0.0) field_error("eta", "must be >= 0");
  cfg.rounds = r.get_uint("rounds");
  if (cfg.rounds < 1) field_error("rounds", "must be >= 1");
  rc.policy = parse_policy(r.at("policy"));
  rc.seed = r.get_uint("seed");
  if (r.has("nack_estimate_mode")) {
    try {
      rc.nack_estimate = parse_nack_estimate(r.get_string("nack_estimate_mode"));
    } catch (const Error&) {
      field_error("nack_estimate_mode", "expected 'carry_forward' or 'ou_decode'");
    }
  }
  rc.track = r.has("track_coordinates") ? parse_track(r.at("track_coordinates"), rc.seed) : TrackSpec::none();
  rc.history_rounds = r.get_uint("history_rounds", 20);
  if (rc.history_rounds < 1) field_error("history_rounds", "must be >= 1");

  if (const auto* blobs = std::get_if<BlobsSource>(&cfg.dataset)) {
    if (blobs->seed_from_run) std::get<BlobsSource>(cfg.dataset).options.seed = rc.seed;
    if (blobs->options.n_clients != rc.K) field_error("K", "must equal dataset.n_clients");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::invalid_argument, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

FederatedDataset materialize_dataset(const ExperimentConfig& config) {
  if (const auto* blobs = std::get_if<BlobsSource>(&config.dataset)) return synth_blobs(blobs->options);
  const auto& csv = std::get<CsvSource>(config.dataset);
  return load_csv(csv.path, csv.schema);
}

ModelSpec resolve_model(const ModelSpec& model, const FederatedDataset& dataset) {
  ModelSpec out = model;
  if (out.input_dim == 0) out.input_dim = dataset.dim;
  if (out.n_classes == 0) out.n_classes = dataset.n_classes;
  if (out.kind != ModelKind::quadratic) {
    if (out.input_dim != dataset.dim) field_error("model.input_dim", "does not match the dataset dimension");
    if (out.n_classes != dataset.n_classes) field_error("model.n_classes", "does not match the dataset classes");
  }
  out.validate();
  return out;
}

}  // namespace fedsample
