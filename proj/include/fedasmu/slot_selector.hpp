#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedasmu/errors.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/rng.hpp"

namespace fedasmu {

struct SelectorParams {
  std::size_t hidden = 16;
  double eta_rl = 1e-3;
  double epsilon_start = 0.3;
  double epsilon_end = 0.01;
  std::uint32_t warmup_rounds = 5;
  double warmup_epsilon = 0.5;
  double phi_q = 0.5;
  double psi_q = 0.9;

  friend bool operator==(const SelectorParams &, const SelectorParams &) = default;
};

/// Linear decay from start to end over the run; progress in [0, 1].
inline double epsilon_at(const SelectorParams &p, double progress) {
  progress = std::clamp(progress, 0.0, 1.0);
  return (1.0 - progress) * p.epsilon_start + progress * p.epsilon_end;
}

enum class SlotAction : int { add = 0, stay = 1, minus = 2 };

inline const char *to_string(SlotAction a) {
  switch (a) {
  case SlotAction::add: return "add";
  case SlotAction::stay: return "stay";
  case SlotAction::minus: return "minus";
  }
  return "?";
}

enum class SlotSource { meta, meta_explore, meta_forced, q_greedy, q_explore };

inline const char *to_string(SlotSource s) {
  switch (s) {
  case SlotSource::meta: return "meta";
  case SlotSource::meta_explore: return "meta-explore";
  case SlotSource::meta_forced: return "meta-forced";
  case SlotSource::q_greedy: return "q-greedy";
  case SlotSource::q_explore: return "q-explore";
  }
  return "?";
}

struct TrajectoryStep {
  std::uint32_t step;
  double prob; // P(send now) emitted at this step
  int bit;     // decision recorded for the update
};

struct SlotDecision {
  std::uint32_t l_star = 1;
  std::vector<TrajectoryStep> trajectory;
  SlotSource source = SlotSource::meta;
  SlotAction action = SlotAction::stay;
  std::uint32_t l_prev = 0; // Q path only

  bool from_meta() const noexcept {
    return source == SlotSource::meta || source == SlotSource::meta_explore ||
           source == SlotSource::meta_forced;
  }
};

// ---------------------------------------------------------------------------
// Meta policy: one gated recurrent cell + sigmoid head.
//
//   x_l = [s_{l-1}, l / L]
//   z   = sigmoid(Wz x + Uz h + bz)
//   c   = tanh(Wc x + Uc h + bc)
//   h_l = (1 - z) * h_{l-1} + z * c
//   p_l = sigmoid(v . h_l + b)        P(send the request at step l)
// ---------------------------------------------------------------------------

class MetaPolicy {
public:
  static constexpr std::size_t input_dim = 2;

  MetaPolicy() = default;
  explicit MetaPolicy(std::size_t hidden) : hidden_(hidden), theta_(param_count(hidden)) {}

  static std::size_t param_count(std::size_t h) {
    return 2 * (h * input_dim + h * h + h) + h + 1;
  }

  static MetaPolicy random(std::size_t hidden, std::uint64_t seed) {
    MetaPolicy p(hidden);
    Rng rng = make_rng(seed, Stream::selector, 0xbeef);
    const double r = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t k = 0; k + 1 < p.theta_.dim(); ++k)
      p.theta_[k] = r * (2.0 * uniform01(rng) - 1.0);
    p.theta_[p.theta_.dim() - 1] = 0.0;
    return p;
  }

  std::size_t hidden() const noexcept { return hidden_; }
  const ParamVector &theta() const noexcept { return theta_; }
  ParamVector &theta() noexcept { return theta_; }
  double &head_bias() noexcept { return theta_[theta_.dim() - 1]; }

  /// Send probabilities along a decision path (bits feed the next input).
  std::vector<double> probabilities(std::uint32_t L, const std::vector<int> &bits) const {
    std::vector<double> probs;
    Tape tape;
    forward(L, bits, probs, tape);
    return probs;
  }

  /// sum_l log P(s_l) for the given steps (bits[k] is s_{k+1}).
  double log_prob(std::uint32_t L, const std::vector<int> &bits) const {
    auto probs = probabilities(L, bits);
    double lp = 0.0;
    for (std::size_t k = 0; k < bits.size(); ++k) {
      const double p = probs[k];
      lp += bits[k] ? std::log(std::max(p, 1e-300)) : std::log(std::max(1.0 - p, 1e-300));
    }
    return lp;
  }

  /// d/dtheta of log_prob, by backpropagation through the unrolled cell.
  ParamVector grad_log_prob(std::uint32_t L, const std::vector<int> &bits) const {
    std::vector<double> probs;
    Tape tape;
    forward(L, bits, probs, tape);
    const std::size_t H = hidden_;
    ParamVector grad(theta_.dim());
    View g = view(grad.values().data());
    View w = view(const_cast<double *>(theta_.values().data()));

    std::vector<double> dh(H, 0.0), dh_prev(H), daz(H), dac(H);
    for (std::size_t k = bits.size(); k-- > 0;) {
      const auto &st = tape[k];
      const double dlogit = static_cast<double>(bits[k]) - probs[k];
      for (std::size_t i = 0; i < H; ++i) {
        g.v[i] += dlogit * st.h[i];
        dh[i] += dlogit * w.v[i];
      }
      *g.b += dlogit;

      for (std::size_t i = 0; i < H; ++i) {
        const double dz = dh[i] * (st.c[i] - st.h_prev[i]);
        const double dc = dh[i] * st.z[i];
        daz[i] = dz * st.z[i] * (1.0 - st.z[i]);
        dac[i] = dc * (1.0 - st.c[i] * st.c[i]);
        dh_prev[i] = dh[i] * (1.0 - st.z[i]);
      }
      for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < input_dim; ++j) {
          g.Wz[i * input_dim + j] += daz[i] * st.x[j];
          g.Wc[i * input_dim + j] += dac[i] * st.x[j];
        }
        for (std::size_t j = 0; j < H; ++j) {
          g.Uz[i * H + j] += daz[i] * st.h_prev[j];
          g.Uc[i * H + j] += dac[i] * st.h_prev[j];
          dh_prev[j] += w.Uz[i * H + j] * daz[i] + w.Uc[i * H + j] * dac[i];
        }
        g.bz[i] += daz[i];
        g.bc[i] += dac[i];
      }
      dh.swap(dh_prev);
    }
    return grad;
  }

private:
  struct View {
    double *Wz, *Uz, *bz, *Wc, *Uc, *bc, *v, *b;
  };

  View view(double *base) const {
    const std::size_t H = hidden_;
    View v{};
    v.Wz = base;
    v.Uz = v.Wz + H * input_dim;
    v.bz = v.Uz + H * H;
    v.Wc = v.bz + H;
    v.Uc = v.Wc + H * input_dim;
    v.bc = v.Uc + H * H;
    v.v = v.bc + H;
    v.b = v.v + H;
    return v;
  }

  struct StepCache {
    std::array<double, input_dim> x;
    std::vector<double> h_prev, z, c, h;
  };
  using Tape = std::vector<StepCache>;

  void forward(std::uint32_t L, const std::vector<int> &bits, std::vector<double> &probs,
               Tape &tape) const {
    const std::size_t H = hidden_;
    View w = view(const_cast<double *>(theta_.values().data()));
    std::vector<double> h(H, 0.0);
    probs.clear();
    tape.clear();
    tape.reserve(bits.size());
    for (std::size_t k = 0; k < bits.size(); ++k) {
      StepCache st;
      st.x = {k == 0 ? 0.0 : static_cast<double>(bits[k - 1]),
              static_cast<double>(k + 1) / static_cast<double>(L)};
      st.h_prev = h;
      st.z.resize(H);
      st.c.resize(H);
      st.h.resize(H);
      for (std::size_t i = 0; i < H; ++i) {
        double az = w.bz[i], ac = w.bc[i];
        for (std::size_t j = 0; j < input_dim; ++j) {
          az += w.Wz[i * input_dim + j] * st.x[j];
          ac += w.Wc[i * input_dim + j] * st.x[j];
        }
        for (std::size_t j = 0; j < H; ++j) {
          az += w.Uz[i * H + j] * h[j];
          ac += w.Uc[i * H + j] * h[j];
        }
        st.z[i] = 1.0 / (1.0 + std::exp(-az));
        st.c[i] = std::tanh(ac);
        st.h[i] = (1.0 - st.z[i]) * h[i] + st.z[i] * st.c[i];
      }
      double logit = *w.b;
      for (std::size_t i = 0; i < H; ++i)
        logit += w.v[i] * st.h[i];
      probs.push_back(1.0 / (1.0 + std::exp(-logit)));
      h = st.h;
      tape.push_back(std::move(st));
    }
  }

  std::size_t hidden_ = 0;
  ParamVector theta_;
};

/// Bits of the canonical path ending at l_star: zeros then a one.
inline std::vector<int> path_bits(std::uint32_t l_star) {
  std::vector<int> bits(l_star, 0);
  bits.back() = 1;
  return bits;
}

/// Distribution of l_star under the policy without exploration; index k
/// holds P(l_star = k), k in [1, L-1].
inline std::vector<double> slot_distribution(const MetaPolicy &policy, std::uint32_t L) {
  detail::require(L >= 2, "slot_distribution: L must be >= 2");
  std::vector<int> zeros(L - 1, 0);
  const auto probs = policy.probabilities(L, zeros);
  std::vector<double> dist(L, 0.0);
  double survive = 1.0;
  for (std::uint32_t l = 1; l + 1 < L; ++l) {
    dist[l] = survive * probs[l - 1];
    survive *= 1.0 - probs[l - 1];
  }
  dist[L - 1] = survive; // forced at the last slot
  return dist;
}

/// Sample a slot: unroll the cell, stop at the first sampled 1 (forced at
/// L - 1); with probability epsilon a uniform slot overrides.
inline SlotDecision meta_select(const MetaPolicy &policy, std::uint32_t L, double epsilon,
                                Rng &rng) {
  detail::require(L >= 2, "meta_select: L must be >= 2");
  SlotDecision d;
  if (uniform01(rng) < epsilon) {
    d.source = SlotSource::meta_explore;
    d.l_star = 1 + static_cast<std::uint32_t>(uniform_index(rng, L - 1));
    const auto bits = path_bits(d.l_star);
    const auto probs = policy.probabilities(L, bits);
    for (std::uint32_t k = 0; k < d.l_star; ++k)
      d.trajectory.push_back({k + 1, probs[k], bits[k]});
    return d;
  }
  std::vector<int> bits;
  for (std::uint32_t l = 1; l <= L - 1; ++l) {
    bits.push_back(0);
    // the next probability only depends on earlier bits, which are all 0
    const double p = policy.probabilities(L, bits).back();
    const int bit = uniform01(rng) < p ? 1 : 0;
    bits.back() = bit;
    d.trajectory.push_back({l, p, bit});
    if (bit) {
      d.l_star = l;
      d.source = SlotSource::meta;
      return d;
    }
  }
  d.l_star = L - 1;
  d.source = SlotSource::meta_forced;
  return d;
}

/// theta += eta * sum_l grad log P(s_l) * (R - b).
inline MetaPolicy meta_update(MetaPolicy policy, const SlotDecision &decision,
                              std::uint32_t L, double reward, double baseline,
                              double eta_rl) {
  detail::require(!decision.trajectory.empty(), "meta_update: empty trajectory");
  const double advantage = reward - baseline;
  if (advantage == 0.0 || eta_rl == 0.0)
    return policy;
  std::vector<int> bits;
  for (const auto &s : decision.trajectory)
    bits.push_back(s.bit);
  axpy(eta_rl * advantage, policy.grad_log_prob(L, bits), policy.theta());
  return policy;
}

// ---------------------------------------------------------------------------
// Per-device Q-table over slots [1, L-1] x {add, stay, minus}
// ---------------------------------------------------------------------------

class QTable {
public:
  QTable() = default;
  explicit QTable(std::uint32_t L) : L_(L), values_(L, {0.0, 0.0, 0.0}) {
    detail::require(L >= 2, "QTable: L must be >= 2");
  }

  std::uint32_t max_epochs() const noexcept { return L_; }
  std::uint32_t min_slot() const noexcept { return 1; }
  std::uint32_t max_slot() const noexcept { return L_ - 1; }

  double &at(std::uint32_t slot, SlotAction a) {
    check(slot);
    return values_[slot][static_cast<std::size_t>(a)];
  }
  double at(std::uint32_t slot, SlotAction a) const {
    check(slot);
    return values_[slot][static_cast<std::size_t>(a)];
  }
  double max_value(std::uint32_t slot) const {
    check(slot);
    const auto &v = values_[slot];
    return std::max({v[0], v[1], v[2]});
  }

  std::uint32_t apply(std::uint32_t slot, SlotAction a) const {
    std::int64_t next = slot;
    if (a == SlotAction::add)
      ++next;
    else if (a == SlotAction::minus)
      --next;
    return static_cast<std::uint32_t>(
        std::clamp<std::int64_t>(next, min_slot(), max_slot()));
  }

  /// Greedy action; ties prefer stay, then add, then minus.
  SlotAction greedy(std::uint32_t slot) const {
    const auto &v = values_.at(slot);
    SlotAction best = SlotAction::stay;
    for (SlotAction a : {SlotAction::add, SlotAction::minus})
      if (v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(best)])
        best = a;
    return best;
  }

  bool all_finite() const {
    for (std::uint32_t s = 1; s < L_; ++s)
      for (double v : values_[s])
        if (!std::isfinite(v))
          return false;
    return true;
  }

private:
  void check(std::uint32_t slot) const {
    if (slot < 1 || slot >= L_)
      throw UsageError("QTable: slot " + std::to_string(slot) + " outside [1, " +
                       std::to_string(L_ - 1) + "]");
  }

  std::uint32_t L_ = 0;
  std::vector<std::array<double, 3>> values_; // index 0 unused
};

inline SlotDecision q_select(const QTable &table, std::uint32_t l_prev, double epsilon,
                             Rng &rng) {
  SlotDecision d;
  d.l_prev = l_prev;
  if (uniform01(rng) < epsilon) {
    d.action = static_cast<SlotAction>(uniform_index(rng, 3));
    d.source = SlotSource::q_explore;
  } else {
    d.action = table.greedy(l_prev);
    d.source = SlotSource::q_greedy;
  }
  d.l_star = table.apply(l_prev, d.action);
  return d;
}

/// H(l_prev, a) += phi (R + psi max_a' H(l_new, a') - H(l_prev, a)).
inline QTable q_update(QTable table, std::uint32_t l_prev, SlotAction a,
                       std::uint32_t l_new, double reward, double phi_q, double psi_q) {
  detail::require(phi_q > 0.0 && phi_q <= 1.0, "q_update: phi_q must be in (0, 1]");
  detail::require(psi_q >= 0.0 && psi_q < 1.0, "q_update: psi_q must be in [0, 1)");
  const double target = reward + psi_q * table.max_value(l_new);
  double &cell = table.at(l_prev, a);
  cell += phi_q * (target - cell);
  return table;
}

} // namespace fedasmu
