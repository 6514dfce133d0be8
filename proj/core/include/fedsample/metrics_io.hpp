#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "fedsample/engine.hpp"

namespace fedsample::metrics {

inline constexpr std::string_view kHeader =
    "round,policy,selected,senders,threshold,uplink_bytes,cum_uplink_bytes,downlink_bytes,test_acc,test_loss,seed";

/// Six significant digits, the same rendering the CSV uses for every float.
std::string format_float(double v);

/// One CSV line (no trailing newline). A missing threshold is an empty field.
std::string format_row(const MetricsRow& row);

/// Writes header plus rows, each line '\n'-terminated.
void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

/// Appended after the last complete row when a run aborts.
std::string truncation_marker(std::size_t failed_round, std::string_view reason);

/// Parsed view of one metrics CSV data line; numeric fields as printed.
struct ParsedRow {
  std::size_t round = 0;
  std::string policy;
  std::size_t selected = 0;
  std::size_t senders = 0;
  std::optional<double> threshold;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t cum_uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double test_acc = 0.0;
  double test_loss = 0.0;
  std::uint64_t seed = 0;
};

/// Reads a metrics CSV, stopping at a truncation marker. Throws parse-error.
std::vector<ParsedRow> read_csv(std::istream& in);

}  // namespace fedsample::metrics
