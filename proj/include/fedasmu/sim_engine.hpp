#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <boost/asio/post.hpp>
#include <boost/asio/thread_pool.hpp>

#include "fedasmu/device_runtime.hpp"
#include "fedasmu/errors.hpp"
#include "fedasmu/metrics.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/rng.hpp"
#include "fedasmu/server_agg.hpp"
#include "fedasmu/slot_selector.hpp"
#include "fedasmu/strategies.hpp"
#include "fedasmu/tasks.hpp"

namespace fedasmu {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::size_t m = 100;
  std::size_t m_prime = 10;
  std::uint64_t T = 500;
  double trigger_period = 10.0;
  double parallelism_cap = 0.1;
  double heterogeneity_ratio = 5.0;
  double base_epoch_time = 1.0;
  double uplink = 0.5;
  double downlink = 0.5;
  double dirichlet_alpha = 0.5;
  std::uint64_t eval_interval = 5;
  double max_virtual_time = std::numeric_limits<double>::infinity();
  /// FedAvg participation per round; 0 means m' / m.
  double fedavg_sample_fraction = 0.0;
  std::uint64_t seed = 1;

  ServerParams server;
  DeviceParams device;
  SelectorParams selector;
  StrategyConfig strategy;

  std::size_t busy_cap() const noexcept {
    return static_cast<std::size_t>(
        std::ceil(parallelism_cap * static_cast<double>(m) - 1e-9));
  }

  friend bool operator==(const RunConfig &, const RunConfig &) = default;
};

inline void validate(const RunConfig &c) {
  using detail::require;
  require(c.m >= 1, "m must be >= 1");
  require(c.m_prime >= 1 && c.m_prime <= c.m, "m_prime must be in [1, m]");
  require(c.T >= 1, "T must be >= 1");
  require(c.server.tau >= 1, "tau (staleness bound) must be >= 1");
  require(c.trigger_period > 0.0, "trigger_period must be > 0");
  require(c.parallelism_cap > 0.0 && c.parallelism_cap <= 1.0,
          "parallelism_cap must be in (0, 1]");
  require(c.heterogeneity_ratio >= 1.0, "heterogeneity_ratio must be >= 1");
  require(c.base_epoch_time > 0.0, "base_epoch_time must be > 0");
  require(c.uplink >= 0.0 && c.downlink >= 0.0, "latencies must be >= 0");
  require(c.dirichlet_alpha > 0.0, "dirichlet_alpha must be > 0");
  require(c.eval_interval >= 1, "eval_interval must be >= 1");
  require(c.max_virtual_time > 0.0, "max_virtual_time must be > 0");
  require(c.fedavg_sample_fraction >= 0.0 && c.fedavg_sample_fraction <= 1.0,
          "fedavg_sample_fraction must be in [0, 1]");
  const auto &s = c.server;
  require(s.mu_alpha > 0.0, "mu_alpha must be > 0");
  require(s.alpha_min > 0.0 && s.alpha_min <= s.alpha_max && s.alpha_max <= 1.0,
          "alpha bounds must satisfy 0 < alpha_min <= alpha_max <= 1");
  require(s.eta_lambda >= 0.0 && s.eta_sigma >= 0.0 && s.eta_iota >= 0.0,
          "server control learning rates must be >= 0");
  require(s.lambda_min > 0.0 && s.lambda_min <= s.lambda_max, "bad lambda bounds");
  require(s.sigma_min > 0.0 && s.sigma_min <= s.sigma_max, "bad sigma bounds");
  require(s.iota_min >= 0.0 && s.iota_min <= s.iota_max, "bad iota bounds");
  const auto &d = c.device;
  require(d.eta_i > 0.0, "eta_i must be > 0");
  require(d.batch_size >= 1, "batch_size must be >= 1");
  require(d.local_epochs >= 1, "local_epochs must be >= 1");
  require(d.mu_beta > 0.0, "mu_beta must be > 0");
  require(d.beta_max >= 0.0 && d.beta_max <= 1.0, "beta_max must be in [0, 1]");
  require(d.rho >= 0.0 && d.rho <= 1.0, "rho must be in [0, 1]");
  require(d.eta_gamma >= 0.0 && d.eta_upsilon >= 0.0, "device control learning rates must be >= 0");
  require(d.gamma_min > 0.0 && d.gamma_min <= d.gamma_max, "bad gamma bounds");
  require(d.upsilon_min <= d.upsilon_max, "bad upsilon bounds");
  if (apply_strategy_device(c.strategy.kind).request_fresh)
    require(d.local_epochs >= 2, "fresh-model requests need local_epochs >= 2");
  const auto &q = c.selector;
  require(q.hidden >= 1, "selector hidden size must be >= 1");
  require(q.phi_q > 0.0 && q.phi_q <= 1.0, "phi_q must be in (0, 1]");
  require(q.psi_q >= 0.0 && q.psi_q < 1.0, "psi_q must be in [0, 1)");
  require(q.epsilon_start >= 0.0 && q.epsilon_start <= 1.0 && q.epsilon_end >= 0.0 &&
              q.epsilon_end <= 1.0 && q.warmup_epsilon >= 0.0 && q.warmup_epsilon <= 1.0,
          "epsilons must be in [0, 1]");
  require(q.eta_rl >= 0.0, "eta_rl must be >= 0");
  require(c.strategy.fedbuff_k >= 1, "fedbuff_k must be >= 1");
  require(c.strategy.fedasync_alpha0 > 0.0 && c.strategy.fedasync_alpha0 <= 1.0,
          "fedasync_alpha0 must be in (0, 1]");
  require(c.strategy.fedasync_a >= 0.0, "fedasync_a must be >= 0");
}

// ---------------------------------------------------------------------------
// Devices, clock and events
// ---------------------------------------------------------------------------

struct DeviceProfile {
  double epoch_time = 1.0;
  double uplink = 0.0;
  double downlink = 0.0;
  bool always_on = true;
};

/// Epoch times uniform in [base, ratio * base].
inline std::vector<DeviceProfile> build_profiles(std::size_t m, double ratio, double base,
                                                 std::uint64_t seed, double uplink = 0.0,
                                                 double downlink = 0.0) {
  detail::require(ratio >= 1.0, "build_profiles: ratio must be >= 1");
  detail::require(base > 0.0, "build_profiles: base epoch time must be > 0");
  Rng rng = make_rng(seed, Stream::profiles);
  std::vector<DeviceProfile> out(m);
  for (auto &p : out) {
    p.epoch_time = base * (1.0 + (ratio - 1.0) * uniform01(rng));
    p.uplink = uplink;
    p.downlink = downlink;
  }
  return out;
}

enum class EventKind { trigger_scan, round_start, fresh_request, fresh_response, upload, evaluate };

inline const char *to_string(EventKind k) {
  switch (k) {
  case EventKind::trigger_scan: return "TriggerScan";
  case EventKind::round_start: return "RoundStart";
  case EventKind::fresh_request: return "FreshRequest";
  case EventKind::fresh_response: return "FreshResponse";
  case EventKind::upload: return "Upload";
  case EventKind::evaluate: return "Evaluate";
  }
  return "?";
}

struct SimEvent {
  double time = 0.0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::trigger_scan;
  std::size_t device = 0;
};

/// Virtual clock plus a min-queue ordered by (time, seq).
class EventQueue {
public:
  double now() const noexcept { return now_; }
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t size() const noexcept { return heap_.size(); }

  std::uint64_t schedule(double time, EventKind kind, std::size_t device = 0) {
    if (!(time >= now_))
      throw InternalError("scheduling an event in the past (" + std::to_string(time) + " < " +
                          std::to_string(now_) + ")");
    const auto seq = next_seq_++;
    heap_.push(SimEvent{time, seq, kind, device});
    return seq;
  }

  /// nullopt signals the end of the simulation.
  std::optional<SimEvent> next() {
    if (heap_.empty())
      return std::nullopt;
    SimEvent ev = heap_.top();
    heap_.pop();
    now_ = ev.time;
    return ev;
  }

private:
  struct Later {
    bool operator()(const SimEvent &a, const SimEvent &b) const noexcept {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  double now_ = 0.0;
  std::uint64_t next_seq_ = 0;
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct AggregationRecord {
  double time = 0.0;
  std::size_t device = 0;
  Version t = 0;
  Version o = 0;
  std::uint64_t staleness = 0;
  bool accepted = false;
  bool buffered = false;
  double alpha = 0.0;
  double lambda = 0.0;
  double sigma = 0.0;
  double iota = 0.0;
  Version new_version = 0;
};

struct DeviceRoundRecord {
  double start_time = 0.0;
  double upload_time = 0.0;
  std::size_t device = 0;
  std::uint64_t round = 0;
  Version o = 0;
  bool requested = false;
  std::uint32_t l_star = 0;
  SlotSource source = SlotSource::meta;
  double request_time = 0.0;
  double response_time = 0.0;
  std::optional<Version> response_version;
  std::uint32_t merges = 0;
  RoundTrace trace;
};

struct RunStats {
  std::uint64_t accepted = 0;
  std::uint64_t discarded = 0;
  std::uint64_t buffered = 0;
  std::size_t busy_cap = 0;
  std::size_t max_busy = 0;
  std::uint64_t max_accepted_staleness = 0;
  double alpha_min_seen = std::numeric_limits<double>::infinity();
  double alpha_max_seen = -std::numeric_limits<double>::infinity();
  std::uint64_t fresh_requests = 0;
  std::uint64_t fresh_responses = 0;
  std::uint64_t fresh_merges = 0;
  std::uint32_t max_merges_per_round = 0;
  double max_response_latency_error = 0.0;
  std::uint64_t rounds_started = 0;
  std::uint64_t rounds_completed = 0;
  std::uint64_t events = 0;
  std::uint64_t clock_rewinds = 0;
  double end_time = 0.0;
};

struct SimulationResult {
  MetricsLog log;
  std::vector<AggregationRecord> aggregations;
  std::vector<DeviceRoundRecord> rounds;
  RunStats stats;
  ParamVector final_model;
  Version final_version = 0;
  MetaPolicy meta;
  std::vector<QTable> q_tables;
  std::vector<DeviceControlState> device_controls;
  std::vector<ServerDeviceRecord> server_records;
};

struct FederatedData {
  std::vector<Dataset> shards;
  Dataset test;
};

/// Non-IID split of the training set across cfg.m devices.
inline FederatedData prepare_federated_data(const Dataset &train, Dataset test,
                                            const RunConfig &cfg) {
  return {dirichlet_partition(train, cfg.m, cfg.dirichlet_alpha, cfg.seed), std::move(test)};
}

struct SimOptions {
  std::size_t threads = 1;
  bool record_traces = true;
};

inline std::uint64_t device_round_seed(std::uint64_t seed, std::size_t device,
                                       std::uint64_t round) {
  return derive_seed({seed, static_cast<std::uint64_t>(Stream::device_round), device, round});
}

namespace detail {

/// Runs device rounds on a pool; results are only read by the event loop.
class RoundExecutor {
public:
  explicit RoundExecutor(std::size_t threads) {
    if (threads > 1)
      pool_ = std::make_unique<boost::asio::thread_pool>(threads);
  }
  ~RoundExecutor() {
    if (pool_)
      pool_->join();
  }
  RoundExecutor(const RoundExecutor &) = delete;
  RoundExecutor &operator=(const RoundExecutor &) = delete;

  std::shared_future<LocalRoundResult> submit(LocalRoundInput in) {
    auto task = std::make_shared<std::packaged_task<LocalRoundResult()>>(
        [in = std::move(in)] { return run_local_round(in); });
    auto fut = task->get_future().share();
    if (pool_)
      boost::asio::post(*pool_, [task] { (*task)(); });
    else
      (*task)();
    return fut;
  }

private:
  std::unique_ptr<boost::asio::thread_pool> pool_;
};

struct InFlight {
  Version o = 0;
  Snapshot w_o;
  double scan_time = 0.0;
  double t0 = 0.0;
  double delay = 0.0;
  std::uint64_t round = 0;
  std::optional<SlotDecision> decision;
  std::optional<FreshDelivery> fresh;
  double request_time = 0.0;
  std::optional<Version> response_version;
  double response_time = 0.0;
  std::shared_future<LocalRoundResult> result;
};

struct DeviceSlot {
  bool busy = false;
  ServerDeviceRecord record;
  DeviceControlState controls;
  QTable q;
  bool meta_done = false;
  std::uint32_t l_prev = 1;
  std::uint64_t rounds = 0;
  std::optional<InFlight> inflight;
};

/// Epoch boundary index j (merge in front of epoch j + 1) at which a model
/// arriving `delay` after the start of epoch l_star is consumed.
inline std::uint32_t consume_boundary(std::uint32_t l_star, double delay, double epoch_time) {
  std::uint32_t extra = 0;
  if (delay > 0.0)
    extra = static_cast<std::uint32_t>(std::ceil(delay / epoch_time - 1e-9));
  return l_star - 1 + extra;
}

inline EvalReport eval_model(const ModelSpec &spec, const ParamVector &w, const Dataset &test) {
  return evaluate(spec, w, test);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Asynchronous driver
// ---------------------------------------------------------------------------

inline SimulationResult run_async(const RunConfig &cfg, const FederatedData &data,
                                  const ModelSpec &spec, const SimOptions &opt) {
  const auto &kind = cfg.strategy.kind;
  const auto behavior = apply_strategy_device(kind);
  const std::uint32_t L = cfg.device.local_epochs;
  const auto profiles = build_profiles(cfg.m, cfg.heterogeneity_ratio, cfg.base_epoch_time,
                                       cfg.seed, cfg.uplink, cfg.downlink);

  GlobalModelStore store(init_params(spec, cfg.seed), cfg.server.tau);
  MetaPolicy meta = MetaPolicy::random(cfg.selector.hidden, cfg.seed);
  std::uint64_t meta_selections = 0;
  FedBuffState buffer;

  std::vector<detail::DeviceSlot> slots(cfg.m);
  for (auto &s : slots) {
    s.record = ServerDeviceRecord::initial(cfg.server, cfg.device.eta_i, L);
    s.controls = DeviceControlState::initial(cfg.device);
    if (L >= 2)
      s.q = QTable(L);
  }

  SimulationResult res;
  res.stats.busy_cap = cfg.busy_cap();
  EventQueue queue;
  Rng trigger_rng = make_rng(cfg.seed, Stream::trigger);
  detail::RoundExecutor executor(opt.threads);

  std::size_t busy = 0;
  std::uint64_t window_count = 0, window_sum = 0, window_max = 0;
  double last_time = 0.0;

  auto sample = [&](double time) {
    const auto rep = detail::eval_model(spec, store.current(), data.test);
    MetricsRecord r;
    r.virtual_time = time;
    r.global_version = store.version();
    r.accuracy = rep.accuracy;
    r.mean_loss = rep.mean_loss;
    r.staleness_mean =
        window_count ? static_cast<double>(window_sum) / static_cast<double>(window_count) : 0.0;
    r.staleness_max = window_max;
    r.discarded_total = res.stats.discarded;
    res.log.push_back(r);
    window_count = window_sum = window_max = 0;
  };

  auto progress = [&] {
    return static_cast<double>(store.version()) / static_cast<double>(cfg.T);
  };

  auto dispatch = [&](std::size_t dev) {
    auto &slot = slots[dev];
    auto &fl = *slot.inflight;
    LocalRoundInput in;
    in.shard = &data.shards[dev];
    in.spec = &spec;
    in.w_o = fl.w_o;
    in.o = fl.o;
    in.params = cfg.device;
    in.controls = slot.controls;
    in.l_star = fl.decision ? fl.decision->l_star : 0;
    in.fresh = fl.fresh;
    in.adapt_controls = behavior.adapt_device_controls;
    in.rng_seed = device_round_seed(cfg.seed, dev, fl.round);
    fl.result = executor.submit(std::move(in));
  };

  sample(0.0);
  queue.schedule(0.0, EventKind::trigger_scan);

  bool done = false;
  while (!done) {
    auto ev = queue.next();
    if (!ev || ev->time > cfg.max_virtual_time)
      break;
    if (ev->time < last_time)
      ++res.stats.clock_rewinds;
    last_time = ev->time;
    ++res.stats.events;
    const double now = ev->time;

    switch (ev->kind) {
    case EventKind::trigger_scan: {
      const std::size_t room = res.stats.busy_cap > busy ? res.stats.busy_cap - busy : 0;
      std::vector<std::size_t> idle;
      for (std::size_t i = 0; i < cfg.m; ++i)
        if (!slots[i].busy && profiles[i].always_on)
          idle.push_back(i);
      const std::size_t k = std::min({cfg.m_prime, room, idle.size()});
      for (std::size_t j = 0; j < k; ++j) {
        const auto pick = j + static_cast<std::size_t>(uniform_index(trigger_rng, idle.size() - j));
        std::swap(idle[j], idle[pick]);
        const auto dev = idle[j];
        auto &slot = slots[dev];
        slot.busy = true;
        ++busy;
        detail::InFlight fl;
        fl.o = store.version();
        fl.w_o = store.snapshot();
        fl.scan_time = now;
        fl.round = slot.rounds++;
        slot.inflight = std::move(fl);
        queue.schedule(now, EventKind::round_start, dev);
      }
      res.stats.max_busy = std::max(res.stats.max_busy, busy);
      if (busy > res.stats.busy_cap)
        throw InternalError("busy device count exceeds the parallelism cap");
      queue.schedule(now + cfg.trigger_period, EventKind::trigger_scan);
      break;
    }

    case EventKind::round_start: {
      const auto dev = ev->device;
      auto &slot = slots[dev];
      auto &fl = *slot.inflight;
      const auto &prof = profiles[dev];
      ++res.stats.rounds_started;
      fl.t0 = now + prof.downlink;
      if (behavior.request_fresh) {
        Rng sel = make_rng(cfg.seed, Stream::selector, dev, fl.round);
        if (!slot.meta_done) {
          const double eps = meta_selections < cfg.selector.warmup_rounds
                                 ? cfg.selector.warmup_epsilon
                                 : epsilon_at(cfg.selector, progress());
          ++meta_selections;
          fl.decision = meta_select(meta, L, eps, sel);
        } else {
          fl.decision = q_select(slot.q, slot.l_prev, epsilon_at(cfg.selector, progress()), sel);
        }
        fl.request_time = fl.t0 + (fl.decision->l_star - 1) * prof.epoch_time;
        queue.schedule(fl.request_time, EventKind::fresh_request, dev);
      } else {
        dispatch(dev);
        queue.schedule(fl.t0 + L * prof.epoch_time + prof.uplink, EventKind::upload, dev);
      }
      break;
    }

    case EventKind::fresh_request: {
      const auto dev = ev->device;
      auto &fl = *slots[dev].inflight;
      const auto &prof = profiles[dev];
      ++res.stats.fresh_requests;
      auto resp = fresh_model_response(store, fl.o);
      fl.response_time = now + prof.downlink;
      if (resp) {
        fl.response_version = resp->version;
        std::uint32_t boundary = fl.decision->l_star - 1;
        if (!cfg.device.blocking_fresh)
          boundary = detail::consume_boundary(fl.decision->l_star, prof.downlink, prof.epoch_time);
        if (boundary < L)
          fl.fresh = FreshDelivery{resp->model, resp->version, boundary + 1};
      }
      if (cfg.device.blocking_fresh)
        fl.delay = prof.downlink;
      dispatch(dev);
      queue.schedule(fl.response_time, EventKind::fresh_response, dev);
      queue.schedule(fl.t0 + L * prof.epoch_time + fl.delay + prof.uplink, EventKind::upload, dev);
      break;
    }

    case EventKind::fresh_response: {
      auto &fl = *slots[ev->device].inflight;
      ++res.stats.fresh_responses;
      const double err = std::abs((now - fl.request_time) - profiles[ev->device].downlink);
      res.stats.max_response_latency_error = std::max(res.stats.max_response_latency_error, err);
      break;
    }

    case EventKind::upload: {
      const auto dev = ev->device;
      auto &slot = slots[dev];
      detail::InFlight fl = std::move(*slot.inflight);
      slot.inflight.reset();
      LocalRoundResult out = fl.result.get();

      // device-side commit
      slot.controls = out.controls;
      const std::uint32_t merges = out.trace.merged ? 1u : 0u;
      res.stats.fresh_merges += merges;
      res.stats.max_merges_per_round = std::max(res.stats.max_merges_per_round, merges);
      if (fl.decision) {
        const auto &d = *fl.decision;
        if (d.from_meta()) {
          if (out.trace.merged)
            meta = meta_update(std::move(meta), d, L, out.trace.reward, slot.controls.baseline,
                               cfg.selector.eta_rl);
          slot.meta_done = true;
        } else if (out.trace.merged) {
          slot.q = q_update(std::move(slot.q), d.l_prev, d.action, d.l_star, out.trace.reward,
                            cfg.selector.phi_q, cfg.selector.psi_q);
        }
        slot.l_prev = d.l_star;
      }
      slot.busy = false;
      --busy;
      ++res.stats.rounds_completed;

      if (opt.record_traces) {
        DeviceRoundRecord rr;
        rr.start_time = fl.t0;
        rr.upload_time = now;
        rr.device = dev;
        rr.round = fl.round;
        rr.o = fl.o;
        rr.requested = fl.decision.has_value();
        if (fl.decision) {
          rr.l_star = fl.decision->l_star;
          rr.source = fl.decision->source;
        }
        rr.request_time = fl.request_time;
        rr.response_time = fl.response_time;
        rr.response_version = fl.response_version;
        rr.merges = merges;
        rr.trace = out.trace;
        res.rounds.push_back(rr);
      }

      // server-side aggregation
      const Version t = store.version();
      AggregationRecord ar;
      ar.time = now;
      ar.device = dev;
      ar.t = t;
      ar.o = fl.o;
      ar.staleness = t - fl.o + 1;
      const bool admitted = admit_upload(t, fl.o, cfg.server.tau);
      if (admitted) {
        auto w_up = std::make_shared<const ParamVector>(std::move(out.w_final));
        const auto outcome =
            apply_strategy_server(cfg.strategy, store, slot.record, std::move(w_up), fl.o,
                                  cfg.server, buffer);
        ar.accepted = outcome.accepted;
        ar.buffered = outcome.buffered;
        ar.alpha = outcome.alpha;
        ar.new_version = outcome.new_version;
        if (outcome.staleness > cfg.server.tau)
          throw InternalError("accepted an upload beyond the staleness bound");
        res.stats.max_accepted_staleness =
            std::max(res.stats.max_accepted_staleness, outcome.staleness);
        if (outcome.buffered) {
          ++res.stats.buffered;
        } else {
          if (outcome.new_version != t + 1)
            throw InternalError("global version did not advance by exactly one");
          ++res.stats.accepted;
          if (kind != StrategyKind::fedbuff) {
            res.stats.alpha_min_seen = std::min(res.stats.alpha_min_seen, outcome.alpha);
            res.stats.alpha_max_seen = std::max(res.stats.alpha_max_seen, outcome.alpha);
          }
          ++window_count;
          window_sum += outcome.staleness;
          window_max = std::max(window_max, outcome.staleness);
          if (store.version() % cfg.eval_interval == 0)
            queue.schedule(now, EventKind::evaluate);
          if (store.version() >= cfg.T)
            done = true;
        }
      } else {
        ++res.stats.discarded;
        ar.new_version = t;
      }
      ar.lambda = slot.record.lambda;
      ar.sigma = slot.record.sigma;
      ar.iota = slot.record.iota;
      if (opt.record_traces)
        res.aggregations.push_back(ar);
      break;
    }

    case EventKind::evaluate:
      sample(now);
      break;
    }
  }

  if (res.log.back().global_version != store.version())
    sample(last_time);
  res.stats.end_time = last_time;
  res.final_model = store.current();
  res.final_version = store.version();
  res.meta = std::move(meta);
  for (auto &s : slots) {
    res.q_tables.push_back(s.q);
    res.device_controls.push_back(s.controls);
    res.server_records.push_back(s.record);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Synchronous FedAvg driver
// ---------------------------------------------------------------------------

struct FedAvgRound {
  ParamVector model;
  double duration = 0.0;
  std::vector<std::size_t> selected;
};

/// One synchronous round: sample devices, train each from the current
/// global model, average by data size. Duration is the slowest device.
inline FedAvgRound fedavg_round(const RunConfig &cfg, const FederatedData &data,
                                const ModelSpec &spec, const std::vector<DeviceProfile> &profiles,
                                const GlobalModelStore &store, double sample_fraction,
                                std::uint64_t round, std::vector<std::uint64_t> &device_rounds,
                                detail::RoundExecutor &executor) {
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(sample_fraction * static_cast<double>(cfg.m))), 1,
      cfg.m);
  std::vector<std::size_t> ids(cfg.m);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  Rng rng = make_rng(cfg.seed, Stream::fedavg_sample, round);
  for (std::size_t j = 0; j < k; ++j)
    std::swap(ids[j], ids[j + static_cast<std::size_t>(uniform_index(rng, cfg.m - j))]);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());

  FedAvgRound out;
  out.selected = ids;
  std::vector<std::shared_future<LocalRoundResult>> futures;
  std::vector<std::size_t> sizes;
  for (auto dev : ids) {
    LocalRoundInput in;
    in.shard = &data.shards[dev];
    in.spec = &spec;
    in.w_o = store.snapshot();
    in.o = store.version();
    in.params = cfg.device;
    in.controls = DeviceControlState::initial(cfg.device);
    in.adapt_controls = false;
    in.rng_seed = device_round_seed(cfg.seed, dev, device_rounds[dev]++);
    futures.push_back(executor.submit(std::move(in)));
    sizes.push_back(data.shards[dev].size());
    const auto &p = profiles[dev];
    out.duration = std::max(out.duration,
                            p.downlink + cfg.device.local_epochs * p.epoch_time + p.uplink);
  }
  std::vector<ParamVector> models;
  for (auto &f : futures)
    models.push_back(f.get().w_final);
  out.model = fedavg_aggregate(models, sizes);
  return out;
}

inline SimulationResult run_fedavg(const RunConfig &cfg, const FederatedData &data,
                                   const ModelSpec &spec, const SimOptions &opt) {
  const auto profiles = build_profiles(cfg.m, cfg.heterogeneity_ratio, cfg.base_epoch_time,
                                       cfg.seed, cfg.uplink, cfg.downlink);
  GlobalModelStore store(init_params(spec, cfg.seed), cfg.server.tau);
  detail::RoundExecutor executor(opt.threads);
  const double frac = cfg.fedavg_sample_fraction > 0.0
                          ? cfg.fedavg_sample_fraction
                          : static_cast<double>(cfg.m_prime) / static_cast<double>(cfg.m);
  std::vector<std::uint64_t> device_rounds(cfg.m, 0);

  SimulationResult res;
  res.stats.busy_cap = cfg.m;
  auto sample = [&](double time) {
    const auto rep = detail::eval_model(spec, store.current(), data.test);
    res.log.push_back({time, store.version(), rep.accuracy, rep.mean_loss,
                       store.version() > 0 ? 1.0 : 0.0, store.version() > 0 ? 1u : 0u, 0});
  };

  double now = 0.0;
  sample(now);
  for (std::uint64_t r = 0; store.version() < cfg.T; ++r) {
    auto round = fedavg_round(cfg, data, spec, profiles, store, frac, r, device_rounds, executor);
    if (now + round.duration > cfg.max_virtual_time)
      break;
    now += round.duration;
    store.commit(std::move(round.model));
    res.stats.accepted += 1;
    res.stats.rounds_completed += round.selected.size();
    res.stats.max_busy = std::max(res.stats.max_busy, round.selected.size());
    res.stats.max_accepted_staleness = 1;
    sample(now);
  }
  res.stats.end_time = now;
  res.final_model = store.current();
  res.final_version = store.version();
  return res;
}

/// Runs one configuration to completion under its strategy's driver.
inline SimulationResult run_simulation(const RunConfig &cfg, const FederatedData &data,
                                       const ModelSpec &spec, const SimOptions &opt = {}) {
  validate(cfg);
  detail::require(data.shards.size() == cfg.m, "run_simulation: need one shard per device");
  for (const auto &s : data.shards)
    detail::require(!s.empty(), "run_simulation: empty device shard");
  detail::require(!data.test.empty(), "run_simulation: empty test set");
  if (is_synchronous(cfg.strategy.kind))
    return run_fedavg(cfg, data, spec, opt);
  return run_async(cfg, data, spec, opt);
}

} // namespace fedasmu
