#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>
#include <vector>

#include "fedsample/config.hpp"
#include "fedsample/engine.hpp"
#include "fedsample/error.hpp"
#include "fedsample/metrics_io.hpp"
#include "fedsample/ou.hpp"
#include "fedsample/parallel.hpp"
#include "fedsample/policies.hpp"
#include "fedsample/rng.hpp"

namespace fedsample::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::invalid_argument, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
}

// Everything validated before the first round runs; failures here are exit 2.
struct Prepared {
  ExperimentConfig config;
  FederatedDataset dataset;
  ModelSpec model;
};

Prepared prepare(const fs::path& config_path, std::optional<std::uint64_t> seed_override) {
  Prepared p;
  p.config = load_config(config_path);
  if (seed_override) p.config.override_seed(*seed_override);
  p.dataset = materialize_dataset(p.config);
  p.model = resolve_model(p.config.model, p.dataset);
  p.config.round.validate();
  require(p.config.round.K == p.dataset.n_clients(), ErrorCode::invalid_argument,
          "field 'K': does not match the dataset's client count");
  return p;
}

struct RunOutcome {
  std::vector<MetricsRow> rows;
  std::uint64_t total_downlink = 0;
  std::optional<std::string> numeric_failure;
  std::size_t failed_round = 0;
};

// Streams rows into `csv` as they complete; a numeric error leaves a truncation marker.
RunOutcome execute(const Prepared& p, std::ostream& csv, std::size_t threads) {
  RunOutcome out;
  csv << metrics::kHeader << '\n';
  EngineOptions eo;
  eo.threads = threads;
  std::vector<MetricsRow> streamed;
  try {
    auto result = run_experiment(p.config.round, p.model, p.dataset, p.config.rounds, eo, [&](const MetricsRow& r) {
      csv << metrics::format_row(r) << '\n';
      csv.flush();
      streamed.push_back(r);
    });
    out.rows = std::move(result.metrics);
    out.total_downlink = result.ledger.cumulative_downlink();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::numeric_error) throw;
    out.numeric_failure = e.what();
    out.rows = std::move(streamed);
    out.failed_round = out.rows.size() + 1;
    csv << metrics::truncation_marker(out.failed_round, e.what()) << '\n';
  }
  return out;
}

std::string sanitize(const std::string& label) {
  std::string s;
  for (char c : label) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-';
    if (keep) s.push_back(c);
    else if (s.empty() || s.back() != '_') s.push_back('_');
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

json policy_to_json(const policy::PolicyConfig& p) { return policy::label(p); }

std::vector<policy::PolicyConfig> parse_grid_policies(const json& list) {
  if (!list.is_array() || list.empty()) fail(ErrorCode::parse_error, "field 'policies': expected a non-empty array");
  std::vector<policy::PolicyConfig> out;
  for (const auto& item : list) {
    if (item.is_string()) {
      out.push_back(policy::parse_label(item.get<std::string>()));
      continue;
    }
    // Reuse the experiment-config policy parser by wrapping the entry in a minimal document.
    json doc = {{"dataset", {{"kind", "csv"}, {"path", "unused.csv"}, {"n_classes", 2}}},
                {"model", {{"kind", "logistic"}}},
                {"K", 1}, {"C", 1.0}, {"E", 1}, {"B", 1}, {"eta", 0.0}, {"rounds", 1}, {"seed", 0},
                {"policy", item}};
    out.push_back(parse_config(doc.dump()).round.policy);
  }
  return out;
}

}  // namespace

std::size_t thread_cap_from_env() {
  if (const char* env = std::getenv("FEDSAMPLE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string run_id(const std::string& config_bytes, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (unsigned char c : config_bytes) mix(c);
  mix(0);
  for (char c : std::to_string(seed)) mix(static_cast<unsigned char>(c));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_run(const CommonOptions& opts, std::ostream& log) {
  const std::string started = utc_now();
  Prepared p;
  try {
    p = prepare(opts.config, opts.seed_override);
  } catch (const Error& e) {
    log << "error: invalid config " << opts.config.string() << ": " << e.what() << '\n';
    return kInvalidConfig;
  }

  try {
    fs::create_directories(opts.out);
    const fs::path csv_path = opts.out / "metrics.csv";
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) fail(ErrorCode::invalid_argument, "cannot write " + csv_path.string());
    const auto outcome = execute(p, csv, opts.threads);

    json manifest = {
        {"run_id", run_id(p.config.raw, p.config.round.seed)},
        {"config_path", opts.config.string()},
        {"output_dir", opts.out.string()},
        {"seed", p.config.round.seed},
        {"policy", policy_to_json(p.config.round.policy)},
        {"rounds_requested", p.config.rounds},
        {"rounds_completed", outcome.rows.size()},
        {"started_at", started},
        {"finished_at", utc_now()},
        {"status", outcome.numeric_failure ? "numeric-error" : "ok"},
        {"files", {"metrics.csv"}},
    };
    if (outcome.numeric_failure) manifest["error"] = *outcome.numeric_failure;
    write_json(opts.out / "manifest.json", manifest);

    if (outcome.numeric_failure) {
      log << "error: " << *outcome.numeric_failure << '\n';
      return kNumericError;
    }
    if (!opts.quiet) {
      const auto& last = outcome.rows.back();
      log << "run " << manifest["run_id"].get<std::string>() << ": " << outcome.rows.size() << " rounds, final acc "
          << metrics::format_float(last.test_acc) << ", uplink " << last.cum_uplink_bytes << " bytes\n";
    }
    return kOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kFailure;
  }
}

int cmd_sweep(const SweepOptions& opts, std::ostream& log) {
  const std::string started = utc_now();
  Prepared base;
  std::vector<policy::PolicyConfig> policies;
  std::vector<std::uint64_t> seeds;
  try {
    base = prepare(opts.common.config, opts.common.seed_override);
    json grid;
    try {
      grid = json::parse(read_file(opts.grid));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::parse_error, std::string("grid: ") + e.what());
    }
    if (!grid.is_object()) fail(ErrorCode::parse_error, "grid: expected an object");
    for (const auto& [key, _] : grid.items()) {
      if (key != "policies" && key != "seeds") fail(ErrorCode::parse_error, "grid: unknown key '" + key + "'");
    }
    policies = parse_grid_policies(grid.value("policies", json()));
    if (grid.contains("seeds")) {
      const auto& s = grid["seeds"];
      if (!s.is_array() || s.empty()) fail(ErrorCode::parse_error, "field 'seeds': expected a non-empty array");
      for (const auto& v : s) {
        if (!v.is_number_unsigned()) fail(ErrorCode::parse_error, "field 'seeds': expected non-negative integers");
        seeds.push_back(v.get<std::uint64_t>());
      }
    } else {
      seeds.push_back(base.config.round.seed);
    }
  } catch (const Error& e) {
    log << "error: invalid sweep input: " << e.what() << '\n';
    return kInvalidConfig;
  }

  struct Cell {
    policy::PolicyConfig policy;
    std::uint64_t seed = 0;
    std::string file;
    std::string status = "ok";
    std::string error;
    std::vector<MetricsRow> rows;
    std::uint64_t total_downlink = 0;
  };
  std::vector<Cell> cells;
  for (const auto& pol : policies) {
    for (auto seed : seeds) {
      Cell c;
      c.policy = pol;
      c.seed = seed;
      c.file = "run_" + sanitize(policy::label(pol)) + "_seed" + std::to_string(seed) + ".csv";
      cells.push_back(std::move(c));
    }
  }

  try {
    fs::create_directories(opts.common.out);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kFailure;
  }

  std::mutex log_mutex;
  parallel_for(cells.size(), opts.common.threads, [&](std::size_t i) {
    Cell& cell = cells[i];
    try {
      Prepared p = base;
      p.config.override_seed(cell.seed);
      p.config.round.policy = cell.policy;
      if (cell.seed != base.config.round.seed) p.dataset = materialize_dataset(p.config);
      std::ofstream csv(opts.common.out / cell.file, std::ios::binary);
      if (!csv) fail(ErrorCode::invalid_argument, "cannot write " + cell.file);
      auto outcome = execute(p, csv, 1);
      cell.rows = std::move(outcome.rows);
      cell.total_downlink = outcome.total_downlink;
      if (outcome.numeric_failure) {
        cell.status = "numeric-error";
        cell.error = *outcome.numeric_failure;
      }
    } catch (const std::exception& e) {
      cell.status = "failed";
      cell.error = e.what();
    }
    if (!opts.common.quiet || cell.status != "ok") {
      std::lock_guard lock(log_mutex);
      log << cell.file << ": " << cell.status;
      if (!cell.error.empty()) log << " (" << cell.error << ")";
      log << '\n';
    }
  });

  std::map<std::uint64_t, std::uint64_t> full_uplink;
  for (const auto& c : cells) {
    if (std::holds_alternative<policy::Full>(c.policy) && c.status == "ok" && !c.rows.empty()) {
      full_uplink[c.seed] = c.rows.back().cum_uplink_bytes;
    }
  }

  std::ofstream summary(opts.common.out / "summary.csv", std::ios::binary);
  summary << "policy,seed,status,rounds,final_acc,final_loss,total_uplink_bytes,total_downlink_bytes,total_senders,"
             "total_selected,acc_per_byte,comm_used_pct,file\n";
  json files = json::array();
  bool any_failed = false;
  for (const auto& c : cells) {
    files.push_back(c.file);
    std::uint64_t up = 0, down = 0, senders = 0, selected = 0;
    for (const auto& r : c.rows) {
      up += r.uplink_bytes;
      down += r.downlink_bytes;
      senders += r.senders;
      selected += r.selected;
    }
    summary << policy::label(c.policy) << ',' << c.seed << ',' << c.status << ',' << c.rows.size() << ',';
    if (!c.rows.empty()) {
      const auto& last = c.rows.back();
      summary << metrics::format_float(last.test_acc) << ',' << metrics::format_float(last.test_loss);
    } else {
      summary << ',';
    }
    summary << ',' << up << ',' << down << ',' << senders << ',' << selected << ',';
    if (!c.rows.empty() && up > 0) summary << metrics::format_float(c.rows.back().test_acc / static_cast<double>(up));
    summary << ',';
    if (auto it = full_uplink.find(c.seed); it != full_uplink.end() && it->second > 0 && c.status == "ok") {
      summary << metrics::format_float(100.0 * static_cast<double>(up) / static_cast<double>(it->second));
    }
    summary << ',' << c.file << '\n';
    any_failed = any_failed || c.status != "ok";
  }
  files.push_back("summary.csv");

  json manifest = {
      {"run_id", run_id(base.config.raw + read_file(opts.grid), base.config.round.seed)},
      {"config_path", opts.common.config.string()},
      {"grid_path", opts.grid.string()},
      {"output_dir", opts.common.out.string()},
      {"cells", cells.size()},
      {"started_at", started},
      {"finished_at", utc_now()},
      {"status", any_failed ? "partial" : "ok"},
      {"files", files},
  };
  write_json(opts.common.out / "manifest.json", manifest);
  return kOk;
}

int cmd_ou_demo(const OuDemoOptions& opts, std::ostream& log) {
  const std::string started = utc_now();
  Prepared p;
  try {
    p = prepare(opts.common.config, opts.common.seed_override);
    if (!(opts.burn_in >= 0.0 && opts.burn_in < 1.0)) fail(ErrorCode::invalid_argument, "burn-in must be in [0, 1)");
    if (opts.lag < 1 || opts.bins < 1) fail(ErrorCode::invalid_argument, "lag and bins must be >= 1");
    if (p.config.round.track.mode == TrackSpec::Mode::none && p.model.param_count() >= kAutoTrackLimit) {
      fail(ErrorCode::invalid_argument, "model too large for full tracking; set track_coordinates");
    }
  } catch (const Error& e) {
    log << "error: invalid config " << opts.common.config.string() << ": " << e.what() << '\n';
    return kInvalidConfig;
  }

  try {
    fs::create_directories(opts.common.out);

    // Central training on the pooled client data.
    Samples pooled;
    pooled.features.cols = p.dataset.dim;
    for (const auto& c : p.dataset.clients) {
      pooled.features.data.insert(pooled.features.data.end(), c.features.data.begin(), c.features.data.end());
      pooled.features.rows += c.features.rows;
      pooled.labels.insert(pooled.labels.end(), c.labels.begin(), c.labels.end());
    }
    const auto& rc = p.config.round;
    TrainOptions to;
    to.epochs = rc.E;
    to.batch_size = rc.B;
    to.eta = rc.eta;
    to.seed = client_train_seed(rc.seed, 0, 0);
    to.track = rc.track.mode == TrackSpec::Mode::none ? TrackSpec::all() : rc.track;
    const ParamVector start = initial_params(p.model, rc.seed);
    LocalTrainReport trained;
    try {
      trained = local_train(p.model, start, pooled, to);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numeric_error) throw;
      log << "error: " << e.what() << '\n';
      return kNumericError;
    }

    const std::size_t steps = trained.steps_taken;
    const auto window_start = static_cast<std::size_t>(std::floor(opts.burn_in * static_cast<double>(steps)));
    const std::size_t n_tracked = trained.tracked.size();

    // Layer name for every parameter index.
    std::vector<std::string> layer_of(start.size());
    {
      std::size_t offset = 0;
      for (const auto& l : start.shape) {
        for (std::size_t i = 0; i < l.size(); ++i) layer_of[offset + i] = l.name;
        offset += l.size();
      }
    }

    {
      std::ofstream out(opts.common.out / "trajectories.csv", std::ios::binary);
      out << "step";
      for (auto j : trained.tracked) out << ",c" << j;
      out << '\n';
      for (std::size_t s = 0; s <= steps; ++s) {
        out << s;
        for (std::size_t c = 0; c < n_tracked; ++c) out << ',' << metrics::format_float(trained.trajectory[c][s]);
        out << '\n';
      }
    }

    std::size_t reverting = 0, degenerate = 0, non_reverting = 0;
    double sum_a = 0.0;
    {
      std::ofstream out(opts.common.out / "fits.csv", std::ios::binary);
      out << "coord,layer,a,b,resid_sd,lambda,mu,sigma,stationary_sd,status\n";
      for (std::size_t c = 0; c < n_tracked; ++c) {
        const auto& full = trained.trajectory[c].values();
        std::vector<double> window(full.begin() + static_cast<std::ptrdiff_t>(window_start), full.end());
        ou::OuEstimate est;
        if (window.size() >= 3) est = ou::fit_ou_ls(ou::Trajectory(std::move(window), 1.0));
        else est.fit.degenerate = true;

        const auto j = trained.tracked[c];
        out << j << ',' << layer_of[j] << ',';
        if (!est.fit.degenerate) {
          out << metrics::format_float(est.fit.a) << ',' << metrics::format_float(est.fit.b) << ','
              << metrics::format_float(est.fit.resid_sd);
        } else {
          out << ",,";
        }
        out << ',';
        if (est.params) {
          out << metrics::format_float(est.params->lambda) << ',' << metrics::format_float(est.params->mu) << ','
              << metrics::format_float(est.params->sigma) << ',' << metrics::format_float(est.params->stationary_sd());
        } else {
          out << ",,,";
        }
        switch (est.status) {
          case ou::FitStatus::ok:
            ++reverting;
            sum_a += est.fit.a;
            out << ",ok\n";
            break;
          case ou::FitStatus::degenerate:
            ++degenerate;
            out << ",degenerate\n";
            break;
          case ou::FitStatus::non_reverting:
            ++non_reverting;
            out << ",non_reverting\n";
            break;
        }
      }
    }

    {
      std::ofstream out(opts.common.out / "increments.csv", std::ios::binary);
      out << "coord,bin,lo,hi,count\n";
      const std::size_t n_hist = std::min(opts.histogram_coords, n_tracked);
      for (std::size_t h = 0; h < n_hist; ++h) {
        const std::size_t c = h * n_tracked / n_hist;
        const auto& v = trained.trajectory[c].values();
        std::vector<double> inc;
        for (std::size_t s = window_start; s + opts.lag < v.size(); s += opts.lag) inc.push_back(v[s + opts.lag] - v[s]);
        if (inc.empty()) continue;
        const auto [mn, mx] = std::minmax_element(inc.begin(), inc.end());
        const double lo = *mn, hi = *mx;
        std::vector<std::size_t> counts(opts.bins, 0);
        for (double x : inc) {
          std::size_t b = hi > lo ? static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(opts.bins)) : 0;
          counts[std::min(b, opts.bins - 1)]++;
        }
        const double width = (hi - lo) / static_cast<double>(opts.bins);
        for (std::size_t b = 0; b < opts.bins; ++b) {
          out << trained.tracked[c] << ',' << b << ',' << metrics::format_float(lo + width * static_cast<double>(b))
              << ',' << metrics::format_float(lo + width * static_cast<double>(b + 1)) << ',' << counts[b] << '\n';
        }
      }
    }

    const double fraction = n_tracked ? static_cast<double>(reverting) / static_cast<double>(n_tracked) : 0.0;
    json summary = {
        {"tracked", n_tracked},
        {"steps", steps},
        {"window_start", window_start},
        {"reverting", reverting},
        {"degenerate", degenerate},
        {"non_reverting", non_reverting},
        {"fraction_reverting", fraction},
        {"mean_a_reverting", reverting ? sum_a / static_cast<double>(reverting) : 0.0},
    };
    write_json(opts.common.out / "summary.json", summary);
    write_json(opts.common.out / "manifest.json",
               {{"run_id", run_id(p.config.raw, rc.seed)},
                {"config_path", opts.common.config.string()},
                {"output_dir", opts.common.out.string()},
                {"seed", rc.seed},
                {"started_at", started},
                {"finished_at", utc_now()},
                {"status", "ok"},
                {"files", {"trajectories.csv", "fits.csv", "increments.csv", "summary.json"}}});

    log << "ou-demo: fitted a in (0,1) for " << reverting << " of " << n_tracked << " coordinates (fraction "
        << metrics::format_float(fraction) << "); degenerate " << degenerate << ", non_reverting " << non_reverting
        << '\n';
    return kOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kFailure;
  }
}

int cmd_export_dataset(const CommonOptions& opts, std::ostream& log) {
  Prepared p;
  try {
    p = prepare(opts.config, opts.seed_override);
  } catch (const Error& e) {
    log << "error: invalid config " << opts.config.string() << ": " << e.what() << '\n';
    return kInvalidConfig;
  }
  try {
    fs::create_directories(opts.out);
    CsvSchema schema;
    if (const auto* csv = std::get_if<CsvSource>(&p.config.dataset)) schema = csv->schema;
    export_csv(p.dataset, opts.out / "dataset.csv", schema);
    if (!opts.quiet) log << "wrote " << (opts.out / "dataset.csv").string() << '\n';
    return kOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace fedsample::cli
