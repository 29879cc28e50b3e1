#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedasmu/sim_engine.hpp"
#include "fedasmu/tasks.hpp"

namespace fedasmu {

struct CheckLine {
  std::string name;
  bool ok = false;
  std::string detail;
};

/// Protocol invariants that must hold over any completed asynchronous run
/// recorded with traces.
inline std::vector<CheckLine> check_invariants(const RunConfig &cfg, const SimulationResult &res) {
  std::vector<CheckLine> out;
  const auto &st = res.stats;

  std::uint64_t over_tau = 0, alpha_out = 0, accepted = 0;
  for (const auto &a : res.aggregations) {
    if (!a.accepted)
      continue;
    ++accepted;
    over_tau += a.staleness > cfg.server.tau;
    if (!a.buffered && (a.alpha < cfg.server.alpha_min || a.alpha > cfg.server.alpha_max))
      ++alpha_out;
  }
  out.push_back({"no accepted upload beyond the staleness bound", over_tau == 0,
                 std::to_string(accepted) + " accepted, " + std::to_string(st.discarded) +
                     " discarded, max staleness " + std::to_string(st.max_accepted_staleness) +
                     " (tau " + std::to_string(cfg.server.tau) + ")"});
  out.push_back({"alpha within [alpha_min, alpha_max]", alpha_out == 0,
                 "observed [" + std::to_string(st.alpha_min_seen) + ", " +
                     std::to_string(st.alpha_max_seen) + "]"});

  std::uint32_t max_merges = 0;
  for (const auto &r : res.rounds)
    max_merges = std::max(max_merges, r.merges);
  out.push_back({"at most one fresh merge per device round", max_merges <= 1,
                 std::to_string(st.fresh_merges) + " merges over " +
                     std::to_string(st.rounds_completed) + " rounds"});
  out.push_back({"busy devices never exceed ceil(cap * m)", st.max_busy <= st.busy_cap,
                 "max busy " + std::to_string(st.max_busy) + ", cap " +
                     std::to_string(st.busy_cap)});
  out.push_back({"fresh responses arrive exactly one downlink later",
                 st.max_response_latency_error <= 1e-9 && st.fresh_responses <= st.fresh_requests,
                 std::to_string(st.fresh_responses) + " responses to " +
                     std::to_string(st.fresh_requests) + " requests"});
  out.push_back({"virtual clock never rewinds", st.clock_rewinds == 0,
                 std::to_string(st.events) + " events"});
  bool monotone = true;
  for (std::size_t i = 1; i < res.log.size(); ++i)
    monotone = monotone && res.log[i].virtual_time >= res.log[i - 1].virtual_time &&
               res.log[i].global_version >= res.log[i - 1].global_version;
  out.push_back({"metrics log is ordered in time and version", monotone,
                 std::to_string(res.log.size()) + " samples"});
  out.push_back({"run reached T accepted aggregations", res.final_version == cfg.T,
                 "version " + std::to_string(res.final_version)});
  return out;
}

/// m = 20, T = 200 with a tight staleness bound so that discards happen.
inline RunConfig invariant_run_config() {
  RunConfig c;
  c.m = 20;
  c.m_prime = 4;
  c.T = 200;
  c.parallelism_cap = 0.4;
  c.trigger_period = 1.0;
  c.base_epoch_time = 1.0;
  c.uplink = 0.3;
  c.downlink = 0.2;
  c.server.tau = 4;
  c.device.local_epochs = 5;
  c.device.batch_size = 16;
  c.seed = 3;
  return c;
}

inline std::vector<CheckLine> run_invariant_suite(std::size_t threads = 1) {
  const auto cfg = invariant_run_config();
  const auto all = generate_synthetic(2000, 20, 10, 2.0, 5);
  const auto split = split_train_test(all, 0.2, 5);
  const auto data = prepare_federated_data(split.train, split.test, cfg);
  ModelSpec spec;
  SimOptions opt;
  opt.threads = threads;
  return check_invariants(cfg, run_simulation(cfg, data, spec, opt));
}

} // namespace fedasmu
