#pragma once

#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedasmu/errors.hpp"

namespace fedasmu {

/// One evaluation sample of the global model.
struct MetricsRecord {
  double virtual_time = 0.0;
  std::uint64_t global_version = 0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  double staleness_mean = 0.0; // over aggregations since the previous sample
  std::uint64_t staleness_max = 0;
  std::uint64_t discarded_total = 0;

  friend bool operator==(const MetricsRecord &, const MetricsRecord &) = default;
};

using MetricsLog = std::vector<MetricsRecord>;

inline constexpr const char *metrics_csv_header =
    "virtual_time,global_version,accuracy,mean_loss,staleness_mean,staleness_max,discarded_total";

inline void write_metrics_csv(std::ostream &os, const MetricsLog &log) {
  os << metrics_csv_header << '\n';
  char buf[256];
  for (const auto &r : log) {
    std::snprintf(buf, sizeof buf, "%.17g,%llu,%.17g,%.17g,%.17g,%llu,%llu\n", r.virtual_time,
                  static_cast<unsigned long long>(r.global_version), r.accuracy, r.mean_loss,
                  r.staleness_mean, static_cast<unsigned long long>(r.staleness_max),
                  static_cast<unsigned long long>(r.discarded_total));
    os << buf;
  }
}

inline MetricsLog read_metrics_csv(std::istream &is) {
  std::string line;
  if (!std::getline(is, line) || line != metrics_csv_header)
    throw UsageError("metrics csv: unexpected header");
  MetricsLog log;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::istringstream row(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(row, cell, ','))
      cells.push_back(cell);
    if (cells.size() != 7)
      throw UsageError("metrics csv: expected 7 columns on line " + std::to_string(lineno));
    try {
      MetricsRecord r;
      r.virtual_time = std::stod(cells[0]);
      r.global_version = std::stoull(cells[1]);
      r.accuracy = std::stod(cells[2]);
      r.mean_loss = std::stod(cells[3]);
      r.staleness_mean = std::stod(cells[4]);
      r.staleness_max = std::stoull(cells[5]);
      r.discarded_total = std::stoull(cells[6]);
      log.push_back(r);
    } catch (const std::exception &) {
      throw UsageError("metrics csv: bad number on line " + std::to_string(lineno));
    }
  }
  return log;
}

/// First virtual time whose accuracy reaches target.
inline std::optional<double> time_to_target(const MetricsLog &log, double target) {
  detail::require(!log.empty(), "time_to_target: empty log");
  for (const auto &r : log)
    if (r.accuracy >= target)
      return r.virtual_time;
  return std::nullopt;
}

} // namespace fedasmu
