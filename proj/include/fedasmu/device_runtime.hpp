#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>

#include "fedasmu/errors.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/rng.hpp"
#include "fedasmu/server_agg.hpp"
#include "fedasmu/tasks.hpp"

namespace fedasmu {

struct DeviceParams {
  double eta_i = 0.05;
  std::size_t batch_size = 32;
  std::uint32_t local_epochs = 5;

  double mu_beta = 1.0;
  double beta_max = 0.9;
  double gamma0 = 1.0;
  double upsilon0 = 0.5;
  double baseline0 = 0.0;
  double rho = 0.9;
  double eta_gamma = 1e-4;
  double eta_upsilon = 1e-4;
  double gamma_min = 1e-3, gamma_max = 1e3;
  double upsilon_min = 0.0, upsilon_max = 5.0;

  /// Pause local SGD until the fresh model arrives instead of merging at the
  /// next epoch boundary after arrival.
  bool blocking_fresh = false;

  /// Test hook: fixed merge weight in place of the dynamic one.
  std::optional<double> beta_override;

  friend bool operator==(const DeviceParams &, const DeviceParams &) = default;
};

struct DeviceControlState {
  double gamma = 1.0;
  double upsilon = 0.5;
  double baseline = 0.0;
  std::uint64_t rounds = 0; // completed fresh merges (t_i)
  double rho = 0.9;

  static DeviceControlState initial(const DeviceParams &p) {
    return {p.gamma0, p.upsilon0, p.baseline0, 0, p.rho};
  }
};

struct LocalTrainingState {
  ParamVector w;
  Version o = 0;
  std::uint32_t epoch = 0;
  bool fresh_merged = false;
  std::uint32_t l_star = 0;
};

struct BetaTerms {
  double phi = 0.0;
  double beta = 0.0;
};

struct DeviceControlGradients {
  double d_gamma = 0.0;
  double d_upsilon = 0.0;
};

/// phi = gamma / sqrt(g) * (1 - upsilon / sqrt(g - o + 1));
/// beta = mu phi / (1 + mu phi), clamped to [0, beta_max].
/// g and o are 1-based round indices.
inline BetaTerms compute_beta(const DeviceControlState &dcs, std::uint64_t g, std::uint64_t o,
                              double mu_beta, double beta_max) {
  detail::require(g >= o && o >= 1, "compute_beta: need g >= o >= 1");
  detail::require(mu_beta > 0.0, "compute_beta: mu_beta must be > 0");
  const double gap = static_cast<double>(g - o + 1);
  BetaTerms b;
  b.phi = dcs.gamma / std::sqrt(static_cast<double>(g)) * (1.0 - dcs.upsilon / std::sqrt(gap));
  const double raw = mu_beta * b.phi / (1.0 + mu_beta * b.phi);
  b.beta = std::clamp(raw, 0.0, beta_max);
  return b;
}

inline LocalTrainingState merge_fresh(LocalTrainingState state, const ParamVector &w_g,
                                      double beta) {
  if (state.fresh_merged)
    throw ProtocolError("merge_fresh: a fresh global model was already merged this round");
  state.w = mix(beta, state.w, w_g);
  state.fresh_merged = true;
  return state;
}

/// Gradients of dot(grad_local, w_b(gamma, upsilon)) where
/// w_b = w_a + beta (w_g - w_a). g, o are 1-based round indices.
inline DeviceControlGradients device_control_gradients(const DeviceControlState &dcs,
                                                       const ParamVector &grad_local,
                                                       const ParamVector &w_g,
                                                       const ParamVector &w_a,
                                                       std::uint64_t g, std::uint64_t o,
                                                       double mu_beta) {
  detail::require(g >= o && o >= 1, "device_control_gradients: need g >= o >= 1");
  const double root_g = std::sqrt(static_cast<double>(g));
  const double root_gap = std::sqrt(static_cast<double>(g - o + 1));
  const double phi = dcs.gamma / root_g * (1.0 - dcs.upsilon / root_gap);
  const double sq = (1.0 + mu_beta * phi) * (1.0 + mu_beta * phi);
  const auto pull = w_g - w_a;
  const double inner = dot(pull, grad_local);
  DeviceControlGradients d;
  d.d_gamma = inner * mu_beta / (root_g * sq) * (1.0 - dcs.upsilon / root_gap);
  d.d_upsilon = -mu_beta * dcs.gamma * inner / (root_g * root_gap * sq);
  return d;
}

inline DeviceControlState update_device_controls(DeviceControlState dcs,
                                                 const DeviceControlGradients &g,
                                                 const DeviceParams &p) {
  detail::require(p.eta_gamma >= 0.0 && p.eta_upsilon >= 0.0,
                  "update_device_controls: learning rates must be >= 0");
  dcs.gamma = std::clamp(dcs.gamma - p.eta_gamma * g.d_gamma, p.gamma_min, p.gamma_max);
  dcs.upsilon = std::clamp(dcs.upsilon - p.eta_upsilon * g.d_upsilon, p.upsilon_min,
                           p.upsilon_max);
  return dcs;
}

/// Positive when the merge lowered the loss.
inline double compute_reward(double loss_before, double loss_after) {
  return loss_before - loss_after;
}

inline DeviceControlState update_reward_baseline(DeviceControlState dcs, double reward,
                                                 double rho) {
  detail::require(rho >= 0.0 && rho <= 1.0, "update_reward_baseline: rho must be in [0, 1]");
  dcs.baseline = (1.0 - rho) * dcs.baseline + rho * reward;
  return dcs;
}

// ---------------------------------------------------------------------------
// Local round
// ---------------------------------------------------------------------------

/// Fresh global model as delivered to the device, with the epoch it is
/// merged in front of (resolved by the simulator from latencies).
struct FreshDelivery {
  Snapshot model;
  Version version = 0;
  std::uint32_t merge_epoch = 1; // merge happens before SGD of this epoch
};

struct LocalRoundInput {
  const Dataset *shard = nullptr;
  const ModelSpec *spec = nullptr;
  Snapshot w_o;
  Version o = 0;
  DeviceParams params;
  DeviceControlState controls;
  std::uint32_t l_star = 0;
  std::optional<FreshDelivery> fresh;
  bool adapt_controls = true;
  std::uint64_t rng_seed = 0;
};

struct RoundTrace {
  std::uint32_t l_star = 0;
  bool merged = false;
  std::uint32_t merge_epoch = 0;
  Version g = 0;
  std::uint64_t staleness = 0; // g - o + 1
  double phi = 0.0;
  double beta = 0.0;
  double reward = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

struct LocalRoundResult {
  ParamVector w_final;
  Version o = 0;
  DeviceControlState controls;
  RoundTrace trace;
};

/// Runs L local epochs; merges the fresh model (if any) in front of its
/// merge epoch. Reward losses are evaluated on the first mini-batch of the
/// epoch that follows the merge, previewed from a copy of the rng so the
/// training stream is untouched.
inline LocalRoundResult run_local_round(const LocalRoundInput &in) {
  detail::require(in.shard && in.spec && in.w_o, "run_local_round: missing inputs");
  detail::require(!in.shard->empty(), "run_local_round: empty shard");
  const auto &p = in.params;
  Rng rng(in.rng_seed);

  LocalTrainingState state{*in.w_o, in.o, 0, false, in.l_star};
  LocalRoundResult out;
  out.o = in.o;
  out.controls = in.controls;
  out.trace.l_star = in.l_star;

  for (std::uint32_t l = 1; l <= p.local_epochs; ++l) {
    state.epoch = l;
    if (in.fresh && in.fresh->merge_epoch == l) {
      const auto &fresh = *in.fresh;
      Rng preview = rng;
      const auto order = epoch_order(in.shard->size(), preview);
      const std::span<const std::size_t> batch(order.data(),
                                               std::min(p.batch_size, order.size()));

      const ParamVector w_a = state.w;
      const double loss_before = loss_and_grad(*in.spec, w_a, *in.shard, batch).loss;
      const auto g_idx = round_index(fresh.version);
      const auto o_idx = round_index(in.o);
      BetaTerms bt = compute_beta(out.controls, g_idx, o_idx, p.mu_beta, p.beta_max);
      if (p.beta_override)
        bt.beta = *p.beta_override;

      state = merge_fresh(std::move(state), *fresh.model, bt.beta);
      const auto after = loss_and_grad(*in.spec, state.w, *in.shard, batch);
      if (in.adapt_controls) {
        auto grads = device_control_gradients(out.controls, after.grad, *fresh.model, w_a, g_idx,
                                              o_idx, p.mu_beta);
        out.controls = update_device_controls(out.controls, grads, p);
      }
      const double reward = compute_reward(loss_before, after.loss);
      out.controls = update_reward_baseline(out.controls, reward, out.controls.rho);
      ++out.controls.rounds;

      auto &tr = out.trace;
      tr.merged = true;
      tr.merge_epoch = l;
      tr.g = fresh.version;
      tr.staleness = fresh.version - in.o + 1;
      tr.phi = bt.phi;
      tr.beta = bt.beta;
      tr.reward = reward;
      tr.loss_before = loss_before;
      tr.loss_after = after.loss;
    }
    state.w = sgd_epoch(*in.spec, std::move(state.w), *in.shard, p.eta_i, p.batch_size, rng);
  }
  out.w_final = std::move(state.w);
  return out;
}

} // namespace fedasmu
