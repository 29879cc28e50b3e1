#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedasmu/errors.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/server_agg.hpp"

namespace fedasmu {

enum class StrategyKind { fedasmu, fedasmu_da, fedasmu_fa, fedasmu_0, fedavg, fedasync, fedbuff };

inline constexpr std::array<std::pair<StrategyKind, std::string_view>, 7> strategy_names{{
    {StrategyKind::fedasmu, "FedASMU"},
    {StrategyKind::fedasmu_da, "FedASMU-DA"},
    {StrategyKind::fedasmu_fa, "FedASMU-FA"},
    {StrategyKind::fedasmu_0, "FedASMU-0"},
    {StrategyKind::fedavg, "FedAvg"},
    {StrategyKind::fedasync, "FedAsync"},
    {StrategyKind::fedbuff, "FedBuff"},
}};

inline std::string to_string(StrategyKind k) {
  for (const auto &[kind, name] : strategy_names)
    if (kind == k)
      return std::string(name);
  return "?";
}

inline StrategyKind parse_strategy(std::string_view s) {
  for (const auto &[kind, name] : strategy_names)
    if (name == s)
      return kind;
  throw UsageError("unknown strategy '" + std::string(s) + "'");
}

/// Per-kind knobs; only the ones relevant to a kind are read.
struct StrategyConfig {
  StrategyKind kind = StrategyKind::fedasmu;
  double fedasync_a = 0.5;
  double fedasync_alpha0 = 0.6;
  std::uint32_t fedbuff_k = 10;

  friend bool operator==(const StrategyConfig &, const StrategyConfig &) = default;
};

struct DeviceBehavior {
  bool request_fresh = false;
  bool adapt_device_controls = false;
};

inline bool is_synchronous(StrategyKind k) { return k == StrategyKind::fedavg; }

inline bool adapts_server_controls(StrategyKind k) {
  return k == StrategyKind::fedasmu || k == StrategyKind::fedasmu_fa;
}

inline DeviceBehavior apply_strategy_device(StrategyKind k) {
  switch (k) {
  case StrategyKind::fedasmu:
    return {true, true};
  case StrategyKind::fedasmu_da:
    return {true, false};
  default:
    return {false, false};
  }
}

/// Pending FedBuff contributions.
struct FedBuffState {
  ParamVector sum;
  std::uint32_t count = 0;
};

/// Staleness-discounted FedAsync weight alpha0 * s^-a, clamped like alpha.
inline double fedasync_alpha(const StrategyConfig &cfg, std::uint64_t staleness,
                             const ServerParams &p) {
  const double a = cfg.fedasync_alpha0 * std::pow(static_cast<double>(staleness), -cfg.fedasync_a);
  return std::clamp(a, p.alpha_min, p.alpha_max);
}

/// Server step for an admitted upload under the given strategy.
inline AggregationOutcome apply_strategy_server(const StrategyConfig &cfg, GlobalModelStore &store,
                                                ServerDeviceRecord &rec, Snapshot w_up, Version o,
                                                const ServerParams &p, FedBuffState &buffer) {
  const Version t = store.version();
  if (o > t)
    throw ProtocolError("apply_strategy_server: origin newer than global version");
  switch (cfg.kind) {
  case StrategyKind::fedasmu:
  case StrategyKind::fedasmu_fa:
    return aggregate_upload(store, rec, std::move(w_up), o, p, true);
  case StrategyKind::fedasmu_da:
  case StrategyKind::fedasmu_0:
    return aggregate_upload(store, rec, std::move(w_up), o, p, false);
  case StrategyKind::fedasync: {
    AggregationOutcome out;
    out.accepted = true;
    out.staleness = t - o + 1;
    out.alpha = fedasync_alpha(cfg, out.staleness, p);
    store.commit(mix(out.alpha, store.current(), *w_up));
    out.new_version = store.version();
    return out;
  }
  case StrategyKind::fedbuff: {
    AggregationOutcome out;
    out.accepted = true;
    out.staleness = t - o + 1;
    auto origin = store.at(o);
    if (!origin)
      throw InternalError("fedbuff: origin snapshot evicted for an admitted upload");
    const double weight = std::pow(static_cast<double>(out.staleness), -cfg.fedasync_a);
    if (buffer.sum.dim() != w_up->dim())
      buffer.sum = ParamVector(w_up->dim());
    axpy(weight, *w_up - *origin, buffer.sum);
    ++buffer.count;
    const auto k = std::max<std::uint32_t>(1, cfg.fedbuff_k);
    out.alpha = cfg.fedasync_alpha0 * weight / static_cast<double>(k);
    if (buffer.count < k) {
      out.buffered = true;
      out.new_version = t;
      return out;
    }
    ParamVector next = store.current();
    axpy(cfg.fedasync_alpha0 / static_cast<double>(k), buffer.sum, next);
    store.commit(std::move(next));
    buffer.sum = ParamVector(w_up->dim());
    buffer.count = 0;
    out.new_version = store.version();
    return out;
  }
  case StrategyKind::fedavg:
    break;
  }
  throw UsageError("apply_strategy_server: FedAvg runs on the synchronous driver");
}

/// Data-size weighted mean of device models.
inline ParamVector fedavg_aggregate(const std::vector<ParamVector> &models,
                                    const std::vector<std::size_t> &sizes) {
  detail::require(!models.empty() && models.size() == sizes.size(),
                  "fedavg_aggregate: need one size per model");
  double total = 0.0;
  for (auto s : sizes)
    total += static_cast<double>(s);
  detail::require(total > 0.0, "fedavg_aggregate: total data size is zero");
  ParamVector out(models.front().dim());
  for (std::size_t i = 0; i < models.size(); ++i)
    axpy(static_cast<double>(sizes[i]) / total, models[i], out);
  return out;
}

} // namespace fedasmu
