#include "fedsample/metrics_io.hpp"

#include <cstdio>
#include <sstream>

#include "fedsample/error.hpp"

namespace fedsample::metrics {

std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string format_row(const MetricsRow& row) {
  std::ostringstream os;
  os << row.round << ',' << row.policy << ',' << row.selected << ',' << row.senders << ','
     << (row.threshold ? format_float(*row.threshold) : std::string()) << ',' << row.uplink_bytes << ','
     << row.cum_uplink_bytes << ',' << row.downlink_bytes << ',' << format_float(row.test_acc) << ','
     << format_float(row.test_loss) << ',' << row.seed;
  return os.str();
}

void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

std::string truncation_marker(std::size_t failed_round, std::string_view reason) {
  std::string clean(reason);
  for (char& c : clean) {
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  }
  return "# truncated at round " + std::to_string(failed_round) + ": " + clean;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::vector<ParsedRow> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHeader) fail(ErrorCode::parse_error, "metrics CSV: bad header");
  std::vector<ParsedRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') break;
    const auto f = split(line);
    if (f.size() != 11) {
      fail(ErrorCode::parse_error, "metrics CSV line " + std::to_string(line_no) + ": expected 11 fields");
    }
    try {
      ParsedRow r;
      r.round = std::stoull(f[0]);
      r.policy = f[1];
      r.selected = std::stoull(f[2]);
      r.senders = std::stoull(f[3]);
      if (!f[4].empty()) r.threshold = std::stod(f[4]);
      r.uplink_bytes = std::stoull(f[5]);
      r.cum_uplink_bytes = std::stoull(f[6]);
      r.downlink_bytes = std::stoull(f[7]);
      r.test_acc = std::stod(f[8]);
      r.test_loss = std::stod(f[9]);
      r.seed = std::stoull(f[10]);
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      fail(ErrorCode::parse_error, "metrics CSV line " + std::to_string(line_no) + ": bad number");
    }
  }
  return rows;
}

}  // namespace fedsample::metrics
