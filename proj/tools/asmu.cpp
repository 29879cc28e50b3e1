// Command-line front end: run experiments, summarize logs, check gradients.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedasmu/fedasmu.hpp"
#include "fedasmu/selftest.hpp"

namespace {

int cmd_run(const std::string &config_path, const std::optional<std::string> &out,
            const std::optional<std::size_t> &seeds, const std::optional<std::string> &strategy,
            const std::optional<double> &target, bool traces) {
  auto cfg = fedasmu::load_config(config_path);
  if (out)
    cfg.out_dir = *out;
  if (seeds) {
    cfg.seeds.clear();
    for (std::size_t s = 1; s <= *seeds; ++s)
      cfg.seeds.push_back(s);
  }
  if (strategy) {
    cfg.strategies.clear();
    for (const auto &name : fedasmu::config_detail::split_list(*strategy))
      cfg.strategies.push_back(fedasmu::parse_strategy(name));
  }
  if (target)
    cfg.target_accuracy = *target;
  fedasmu::validate(cfg);

  fedasmu::RunOptions opt;
  opt.threads = fedasmu::threads_from_env();
  opt.traces = traces;
  opt.progress = &std::cerr;
  const auto result = fedasmu::run_experiment(cfg, opt);
  for (const auto &r : result.runs)
    std::cout << r.log.string() << "\n";
  std::cout << result.manifest.string() << "\n";
  return 0;
}

int cmd_summarize(const std::string &dir, const std::optional<double> &target) {
  const double t = target ? *target : fedasmu::manifest_target(dir).value_or(0.6);
  const auto report = fedasmu::summarize(fedasmu::read_log_dir(dir), t);
  const auto csv = std::filesystem::path(dir) / "summary.csv";
  fedasmu::write_file_atomic(csv, [&](std::ostream &os) { fedasmu::write_summary_csv(os, report); });
  fedasmu::write_summary_table(std::cout, report);
  return 0;
}

int cmd_grad_check() {
  bool ok = true;
  for (const auto &r : fedasmu::gradcheck::run_all()) {
    std::printf("%-40s instances=%zu coords=%zu max_rel_err=%.3e tol=%.0e %s\n", r.name.c_str(),
                r.instances, r.coordinates, r.max_rel_error, r.tolerance,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto &c : fedasmu::run_invariant_suite(fedasmu::threads_from_env())) {
    std::printf("%-4s %-50s %s\n", c.ok ? "ok" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.ok;
  }
  return ok ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Asynchronous federated learning simulator"};
  app.require_subcommand(1);

  auto *run = app.add_subcommand("run", "run every (strategy, seed) pair of a config");
  std::string config_positional, config_flag;
  std::optional<std::string> out, strategy;
  std::optional<std::size_t> seeds;
  std::optional<double> target;
  bool traces = false;
  run->add_option("config_file", config_positional, "config file");
  run->add_option("--config", config_flag, "config file");
  run->add_option("--out", out, "output directory (overrides the config)");
  run->add_option("--seeds", seeds, "use seeds 1..N")->check(CLI::PositiveNumber);
  run->add_option("--strategy", strategy, "strategy name or comma list (overrides the config)");
  run->add_option("--target", target, "target accuracy for summaries");
  run->add_flag("--traces", traces, "also write JSON-lines aggregation and round traces");

  auto *sum = app.add_subcommand("summarize", "summarize the logs in a run directory");
  std::string dir;
  std::optional<double> sum_target;
  sum->add_option("dir", dir, "run directory")->required();
  sum->add_option("--target", sum_target, "target accuracy (default: from the manifest)");

  app.add_subcommand("grad-check", "finite-difference checks of all analytic gradients");
  app.add_subcommand("selftest", "protocol invariant suite on a small run");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto &path = !config_flag.empty() ? config_flag : config_positional;
      if (path.empty())
        throw fedasmu::UsageError("run: a config file is required");
      return cmd_run(path, out, seeds, strategy, target, traces);
    }
    if (*sum)
      return cmd_summarize(dir, sum_target);
    if (app.got_subcommand("grad-check"))
      return cmd_grad_check();
    if (app.got_subcommand("selftest"))
      return cmd_selftest();
  } catch (const fedasmu::ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fedasmu::UsageError &e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
