#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedasmu/config.hpp"
#include "fedasmu/errors.hpp"
#include "fedasmu/metrics.hpp"
#include "fedasmu/sim_engine.hpp"
#include "fedasmu/strategies.hpp"
#include "fedasmu/tasks.hpp"
#include "fedasmu/trace.hpp"

namespace fedasmu {

inline constexpr const char *library_version = "0.3.0";

/// Worker threads for device rounds: ASMU_THREADS if set, else the hardware
/// concurrency (at most 8). Results do not depend on this value.
inline std::size_t threads_from_env() {
  if (const char *env = std::getenv("ASMU_THREADS")) {
    char *end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw UsageError("ASMU_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
}

inline TrainTestSplit load_dataset(const ExperimentConfig &cfg) {
  const auto &d = cfg.dataset;
  Dataset all;
  if (d.csv_path.empty()) {
    all = generate_synthetic(d.samples, d.features, static_cast<int>(d.classes), d.class_sep,
                             d.seed);
  } else {
    std::ifstream in(d.csv_path);
    if (!in)
      throw ConfigError("cannot open dataset '" + d.csv_path + "'");
    all = read_dataset_csv(in, static_cast<int>(d.classes));
    if (all.dim != d.features)
      throw ConfigError("dataset '" + d.csv_path + "' has " + std::to_string(all.dim) +
                        " features, config says " + std::to_string(d.features));
  }
  return split_train_test(all, d.test_fraction, d.seed);
}

inline RunConfig run_config_for(const ExperimentConfig &cfg, StrategyKind kind,
                                std::uint64_t seed) {
  RunConfig r = cfg.run;
  r.strategy.kind = kind;
  r.seed = seed;
  return r;
}

inline std::string log_filename(StrategyKind kind, std::uint64_t seed) {
  return to_string(kind) + "_seed" + std::to_string(seed) + ".csv";
}

/// Writes through a temporary file renamed into place, so an interrupted
/// writer never leaves a partial file at `path`.
inline void write_file_atomic(const std::filesystem::path &path,
                              const std::function<void(std::ostream &)> &writer) {
  auto tmp = path;
  tmp += ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out)
        throw ConfigError("cannot write '" + tmp.string() + "'");
      writer(out);
      out.flush();
      if (!out)
        throw ConfigError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

struct RunOptions {
  std::size_t threads = 1;
  bool traces = false;
  std::ostream *progress = nullptr;
};

struct RunSummary {
  StrategyKind strategy = StrategyKind::fedasmu;
  std::uint64_t seed = 0;
  std::filesystem::path log;
  double final_accuracy = 0.0;
  Version final_version = 0;
  double end_time = 0.0;
  std::uint64_t discarded = 0;
};

struct ExperimentOutput {
  std::vector<RunSummary> runs;
  std::filesystem::path manifest;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// One simulation per (strategy, seed), each written to its own CSV, plus a
/// manifest.json describing the batch.
inline ExperimentOutput run_experiment(const ExperimentConfig &cfg, const RunOptions &opt = {}) {
  validate(cfg);
  const std::filesystem::path dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());

  const auto split = load_dataset(cfg);
  const auto spec = cfg.model_spec();
  ExperimentOutput out;

  for (auto kind : cfg.strategies) {
    for (auto seed : cfg.seeds) {
      const auto rc = run_config_for(cfg, kind, seed);
      const auto data = prepare_federated_data(split.train, split.test, rc);
      SimOptions so;
      so.threads = opt.threads;
      so.record_traces = opt.traces;
      const auto res = run_simulation(rc, data, spec, so);

      RunSummary rs;
      rs.strategy = kind;
      rs.seed = seed;
      rs.log = dir / log_filename(kind, seed);
      rs.final_accuracy = res.log.back().accuracy;
      rs.final_version = res.final_version;
      rs.end_time = res.stats.end_time;
      rs.discarded = res.stats.discarded;
      write_file_atomic(rs.log, [&](std::ostream &os) { write_metrics_csv(os, res.log); });

      if (opt.traces) {
        const auto stem = to_string(kind) + "_seed" + std::to_string(seed);
        write_file_atomic(dir / (stem + ".aggregations.jsonl"),
                          [&](std::ostream &os) { write_jsonl(os, res.aggregations); });
        write_file_atomic(dir / (stem + ".rounds.jsonl"),
                          [&](std::ostream &os) { write_jsonl(os, res.rounds); });
        write_file_atomic(dir / (stem + ".selector.json"),
                          [&](std::ostream &os) { os << selector_dump(res).dump(1) << '\n'; });
      }
      if (opt.progress)
        *opt.progress << to_string(kind) << " seed " << seed << ": accuracy "
                      << rs.final_accuracy << " after " << rs.final_version
                      << " aggregations, virtual time " << rs.end_time << "\n";
      out.runs.push_back(std::move(rs));
    }
  }

  nlohmann::json manifest;
  manifest["tool"] = "fedasmu";
  manifest["version"] = library_version;
  manifest["created_utc"] = utc_timestamp();
  manifest["config_hash"] = config_hash(cfg);
  manifest["config"] = dump_config(cfg);
  manifest["target_accuracy"] = cfg.target_accuracy;
  auto &runs = manifest["runs"] = nlohmann::json::array();
  for (const auto &r : out.runs)
    runs.push_back({{"strategy", to_string(r.strategy)},
                    {"seed", r.seed},
                    {"file", r.log.filename().string()},
                    {"final_accuracy", r.final_accuracy},
                    {"final_version", r.final_version},
                    {"end_time", r.end_time},
                    {"discarded", r.discarded}});
  out.manifest = dir / "manifest.json";
  write_file_atomic(out.manifest, [&](std::ostream &os) { os << manifest.dump(2) << '\n'; });
  return out;
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

struct StrategySummary {
  std::string strategy;
  std::size_t runs = 0;
  std::size_t reached = 0;
  double final_accuracy = 0.0;         // median over seeds
  std::optional<double> time_to_target; // median, unreached runs count as +inf
  double discarded = 0.0;               // median
};

struct SummaryReport {
  double target = 0.0;
  std::vector<StrategySummary> rows;
};

inline double median(std::vector<double> v) {
  detail::require(!v.empty(), "median: empty sample");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  if (n % 2 == 1)
    return v[n / 2];
  const double a = v[n / 2 - 1], b = v[n / 2];
  if (std::isinf(a) || std::isinf(b))
    return std::isinf(a) ? a : b;
  return 0.5 * (a + b);
}

/// logs: strategy name -> one MetricsLog per seed.
inline SummaryReport summarize(const std::map<std::string, std::vector<MetricsLog>> &logs,
                               double target) {
  SummaryReport rep;
  rep.target = target;
  auto rank = [](const std::string &name) {
    for (std::size_t i = 0; i < strategy_names.size(); ++i)
      if (strategy_names[i].second == name)
        return i;
    return strategy_names.size();
  };
  std::vector<std::string> names;
  for (const auto &[name, _] : logs)
    names.push_back(name);
  std::stable_sort(names.begin(), names.end(),
                   [&](const auto &a, const auto &b) { return rank(a) < rank(b); });

  for (const auto &name : names) {
    const auto &runs = logs.at(name);
    detail::require(!runs.empty(), "summarize: strategy '" + name + "' has no logs");
    StrategySummary s;
    s.strategy = name;
    s.runs = runs.size();
    std::vector<double> acc, ttt, disc;
    for (const auto &log : runs) {
      detail::require(!log.empty(), "summarize: empty log for '" + name + "'");
      acc.push_back(log.back().accuracy);
      disc.push_back(static_cast<double>(log.back().discarded_total));
      const auto t = time_to_target(log, target);
      s.reached += t.has_value();
      ttt.push_back(t.value_or(std::numeric_limits<double>::infinity()));
    }
    s.final_accuracy = median(acc);
    s.discarded = median(disc);
    const double mt = median(ttt);
    if (std::isfinite(mt))
      s.time_to_target = mt;
    rep.rows.push_back(s);
  }
  return rep;
}

/// Reads every <strategy>_seed<k>.csv in dir.
inline std::map<std::string, std::vector<MetricsLog>> read_log_dir(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("not a directory: '" + dir.string() + "'");
  static const std::regex pattern(R"((.+)_seed(\d+)\.csv)");
  std::vector<std::filesystem::path> files;
  for (const auto &e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), pattern))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, std::vector<MetricsLog>> out;
  for (const auto &f : files) {
    std::smatch m;
    const auto name = f.filename().string();
    std::regex_match(name, m, pattern);
    std::ifstream in(f);
    try {
      out[m[1].str()].push_back(read_metrics_csv(in));
    } catch (const UsageError &e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  if (out.empty())
    throw ConfigError("no metrics logs found in '" + dir.string() + "'");
  return out;
}

/// Target stored in the directory's manifest, if any.
inline std::optional<double> manifest_target(const std::filesystem::path &dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in)
    return std::nullopt;
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.contains("target_accuracy"))
    return std::nullopt;
  return j["target_accuracy"].get<double>();
}

inline void write_summary_csv(std::ostream &os, const SummaryReport &rep) {
  os << "strategy,runs,final_accuracy,time_to_target,reached,discarded\n";
  char buf[256];
  for (const auto &r : rep.rows) {
    std::string ttt = r.time_to_target ? config_detail::fmt_double(*r.time_to_target) : "";
    std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%s,%zu,%.17g\n", r.strategy.c_str(), r.runs,
                  r.final_accuracy, ttt.c_str(), r.reached, r.discarded);
    os << buf;
  }
}

/// Human-readable table; "/" marks a target that was not reached.
inline void write_summary_table(std::ostream &os, const SummaryReport &rep) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %5s %9s %14s %10s\n", "strategy", "runs", "accuracy",
                "time_to_target", "discarded");
  os << buf;
  for (const auto &r : rep.rows) {
    char t[32];
    if (r.time_to_target)
      std::snprintf(t, sizeof t, "%.1f", *r.time_to_target);
    else
      std::snprintf(t, sizeof t, "/");
    std::snprintf(buf, sizeof buf, "%-12s %5zu %9.4f %14s %10.0f\n", r.strategy.c_str(), r.runs,
                  r.final_accuracy, t, r.discarded);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "target accuracy %.3f; time is median virtual seconds\n",
                rep.target);
  os << buf;
}

} // namespace fedasmu
