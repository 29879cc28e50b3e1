#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedasmu/fedasmu.hpp"

using namespace fedasmu;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string &name) {
  auto p = fs::temp_directory_path() / ("fedasmu_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(const fs::path &out) {
  ExperimentConfig c;
  c.out_dir = out.string();
  c.dataset.samples = 400;
  c.dataset.features = 5;
  c.dataset.classes = 3;
  c.run.m = 8;
  c.run.m_prime = 3;
  c.run.T = 15;
  c.run.trigger_period = 1.0;
  c.run.parallelism_cap = 0.5;
  c.run.device.local_epochs = 3;
  c.strategies = {StrategyKind::fedasmu, StrategyKind::fedavg};
  c.seeds = {1, 2, 3};
  return c;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MetricsLog log_of(std::initializer_list<std::pair<double, double>> time_acc) {
  MetricsLog log;
  for (auto [t, a] : time_acc)
    log.push_back({t, 0, a, 0, 0, 0, 0});
  return log;
}

} // namespace

TEST(Experiment, WritesOneLogPerRunAndAManifest) {
  const auto dir = fresh_dir("layout");
  const auto out = run_experiment(tiny(dir));
  EXPECT_EQ(out.runs.size(), 6u);
  std::size_t csv = 0;
  for (const auto &e : fs::directory_iterator(dir))
    csv += e.path().extension() == ".csv";
  EXPECT_EQ(csv, 6u);
  EXPECT_TRUE(fs::exists(dir / "FedAvg_seed2.csv"));
  const auto manifest = nlohmann::json::parse(slurp(out.manifest));
  EXPECT_EQ(manifest["runs"].size(), 6u);
  EXPECT_EQ(manifest["config_hash"], config_hash(tiny(dir)));
  EXPECT_EQ(manifest_target(dir), 0.6);
  const auto logs = read_log_dir(dir);
  EXPECT_EQ(logs.at("FedASMU").size(), 3u);
  fs::remove_all(dir);
}

TEST(Experiment, RerunsAreByteIdentical) {
  const auto a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
  run_experiment(tiny(a), {1, true, nullptr});
  run_experiment(tiny(b), {4, true, nullptr});
  std::size_t compared = 0;
  for (const auto &e : fs::directory_iterator(a)) {
    if (e.path().filename() == "manifest.json")
      continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
    ++compared;
  }
  EXPECT_EQ(compared, 6u * 4u); // csv plus three trace files per run
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, UnwritableOutputIsAConfigError) {
  const auto dir = fresh_dir("blocked");
  fs::create_directories(dir.parent_path());
  std::ofstream(dir.string()) << "a file, not a directory";
  EXPECT_THROW(run_experiment(tiny(dir)), ConfigError);
  fs::remove(dir);
}

TEST(AtomicWrite, FailedWriterLeavesNoFile) {
  const auto dir = fresh_dir("atomic");
  fs::create_directories(dir);
  const auto target = dir / "x.csv";
  EXPECT_THROW(write_file_atomic(target,
                                 [](std::ostream &os) {
                                   os << "half";
                                   throw std::runtime_error("injected");
                                 }),
               std::runtime_error);
  EXPECT_FALSE(fs::exists(target));
  EXPECT_TRUE(fs::is_empty(dir));

  write_file_atomic(target, [](std::ostream &os) { os << "old"; });
  EXPECT_THROW(write_file_atomic(target,
                                 [](std::ostream &os) {
                                   os << "new";
                                   throw std::runtime_error("injected");
                                 }),
               std::runtime_error);
  EXPECT_EQ(slurp(target), "old");
  fs::remove_all(dir);
}

TEST(ReadLogDir, RejectsCorruptLogs) {
  const auto dir = fresh_dir("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "FedASMU_seed1.csv") << metrics_csv_header << "\n1,2,3\n";
  EXPECT_THROW(read_log_dir(dir), ConfigError);
  fs::remove_all(dir);
  EXPECT_THROW(read_log_dir(dir), ConfigError);
}

TEST(Median, Examples) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(median({1, inf, 2}), 2.0);
  EXPECT_EQ(median({1, 2, inf, inf}), inf);
  EXPECT_EQ(median({1, inf}), inf);
  EXPECT_THROW(median({}), UsageError);
}

TEST(TimeToTarget, Examples) {
  const auto log = log_of({{0, 0.1}, {5, 0.55}, {9, 0.61}, {12, 0.58}, {20, 0.7}});
  EXPECT_EQ(time_to_target(log, 0.6), 9.0);
  EXPECT_EQ(time_to_target(log, 0.55), 5.0); // reaching counts, exceeding not required
  EXPECT_FALSE(time_to_target(log, 0.8));
  EXPECT_THROW(time_to_target({}, 0.5), UsageError);
}

TEST(Summary, MediansAndUnreachedTargets) {
  std::map<std::string, std::vector<MetricsLog>> logs;
  logs["FedAvg"] = {log_of({{0, 0}, {30, 0.7}}), log_of({{0, 0}, {50, 0.5}}),
                    log_of({{0, 0}, {40, 0.65}})};
  logs["FedASMU"] = {log_of({{0, 0}, {10, 0.4}}), log_of({{0, 0}, {10, 0.5}})};
  const auto rep = summarize(logs, 0.6);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].strategy, "FedASMU"); // canonical order, not alphabetical
  EXPECT_FALSE(rep.rows[0].time_to_target);
  EXPECT_EQ(rep.rows[0].reached, 0u);
  EXPECT_DOUBLE_EQ(rep.rows[0].final_accuracy, 0.45);
  EXPECT_EQ(rep.rows[1].time_to_target, 40.0);
  EXPECT_EQ(rep.rows[1].reached, 2u);

  std::ostringstream table;
  write_summary_table(table, rep);
  EXPECT_NE(table.str().find("/"), std::string::npos);
  std::ostringstream csv;
  write_summary_csv(csv, rep);
  EXPECT_NE(csv.str().find("FedAvg,3,0.65000000000000002,40,2,0"), std::string::npos) << csv.str();
}

TEST(MetricsCsv, RoundTrip) {
  Rng rng(5);
  MetricsLog log;
  for (int i = 0; i < 50; ++i)
    log.push_back({uniform01(rng) * 100, std::uint64_t(i), uniform01(rng), uniform01(rng) * 3,
                   uniform01(rng) * 10, uniform_index(rng, 20), uniform_index(rng, 500)});
  std::stringstream ss;
  write_metrics_csv(ss, log);
  EXPECT_EQ(read_metrics_csv(ss), log);
  std::stringstream bad("wrong,header\n");
  EXPECT_THROW(read_metrics_csv(bad), UsageError);
}

TEST(Trace, JsonLinesHaveOneObjectPerRecord) {
  std::vector<AggregationRecord> recs(3);
  recs[1].accepted = true;
  recs[1].alpha = 0.25;
  std::ostringstream os;
  write_jsonl(os, recs);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    if (n == 1) {
      EXPECT_EQ(j["alpha"], 0.25);
    }
    ++n;
  }
  EXPECT_EQ(n, 3);
}
