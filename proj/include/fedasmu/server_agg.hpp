#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>

#include "fedasmu/errors.hpp"
#include "fedasmu/params.hpp"

namespace fedasmu {

using Version = std::uint64_t;
using Snapshot = std::shared_ptr<const ParamVector>;

/// Server-side hyper-parameters and clamp ranges.
struct ServerParams {
  std::uint64_t tau = 99;
  double mu_alpha = 1.0;
  double alpha_min = 0.01;
  double alpha_max = 0.99;

  double lambda0 = 1.0;
  double sigma0 = 1.0;
  double iota0 = 0.0;

  double eta_lambda = 1e-4;
  double eta_sigma = 1e-4;
  double eta_iota = 1e-4;

  double lambda_min = 1e-3, lambda_max = 1e3;
  double sigma_min = 1e-2, sigma_max = 10.0;
  double iota_min = 0.0, iota_max = 10.0;

  /// Use the printed ln(sigma) form for the sigma gradient instead of the
  /// exact derivative of (o - o')^-sigma.
  bool paper_literal_sigma_grad = false;

  friend bool operator==(const ServerParams &, const ServerParams &) = default;
};

/// Formula indices are 1-based: global version v is round v + 1, so that
/// sqrt(t) is defined for the very first aggregation. Staleness differences
/// are unaffected by the shift.
constexpr std::uint64_t round_index(Version v) noexcept { return v + 1; }

/// Versioned global model with a ring of recent snapshots.
///
/// The ring holds versions [t - tau - 1, t]; anything older can never be
/// referenced by an admitted upload or by the control gradients.
class GlobalModelStore {
public:
  GlobalModelStore(ParamVector initial, std::uint64_t tau)
      : depth_(tau + 2), base_(0) {
    ring_.push_back(std::make_shared<const ParamVector>(std::move(initial)));
  }

  Version version() const noexcept { return base_ + ring_.size() - 1; }
  const ParamVector &current() const noexcept { return *ring_.back(); }
  Snapshot snapshot() const noexcept { return ring_.back(); }
  Version oldest() const noexcept { return base_; }
  std::size_t depth() const noexcept { return depth_; }

  /// nullptr when the version has been evicted or does not exist yet.
  Snapshot at(Version v) const noexcept {
    if (v < base_ || v > version())
      return nullptr;
    return ring_[static_cast<std::size_t>(v - base_)];
  }

  /// Install w as version t + 1.
  void commit(ParamVector w) {
    ring_.push_back(std::make_shared<const ParamVector>(std::move(w)));
    while (ring_.size() > depth_) {
      ring_.pop_front();
      ++base_;
    }
  }

private:
  std::size_t depth_;
  Version base_;
  std::deque<Snapshot> ring_;
};

struct PreviousUpload {
  Snapshot model;   // w_{o'}^i
  Version origin;   // o'
  Version arrival;  // global version it was merged into (produced arrival + 1)
};

/// Per-device state the server keeps for the dynamic weight.
struct ServerDeviceRecord {
  double lambda = 1.0;
  double sigma = 1.0;
  double iota = 0.0;
  std::optional<PreviousUpload> last_upload;
  double eta_i = 0.05;
  std::uint32_t local_epochs = 5;

  static ServerDeviceRecord initial(const ServerParams &p, double eta_i,
                                    std::uint32_t local_epochs) {
    ServerDeviceRecord r;
    r.lambda = p.lambda0;
    r.sigma = p.sigma0;
    r.iota = p.iota0;
    r.eta_i = eta_i;
    r.local_epochs = local_epochs;
    return r;
  }
};

struct AggregationOutcome {
  bool accepted = false;
  bool buffered = false; // accepted into a buffer without a model update
  double alpha = 0.0;
  double xi = 0.0;
  std::uint64_t staleness = 0;
  Version new_version = 0;
  bool controls_updated = false;
};

struct AlphaTerms {
  double xi = 0.0;
  double alpha_raw = 0.0;
  double alpha = 0.0;
};

struct ServerControlGradients {
  double d_lambda = 0.0;
  double d_sigma = 0.0;
  double d_iota = 0.0;
};

// ---------------------------------------------------------------------------

/// True when staleness t - o + 1 is within the bound (inclusive).
inline bool admit_upload(Version t, Version o, std::uint64_t tau) {
  if (o > t)
    throw ProtocolError("upload origin version " + std::to_string(o) +
                        " is newer than the global version " + std::to_string(t));
  return t - o + 1 <= tau;
}

/// xi = lambda / (sqrt(t) (t - o + 1)^sigma) + iota;
/// alpha = mu xi / (1 + mu xi), clamped to [alpha_min, alpha_max].
/// t and o are 1-based round indices.
inline AlphaTerms compute_alpha(const ServerDeviceRecord &rec, std::uint64_t t,
                                std::uint64_t o, const ServerParams &p) {
  const double staleness = static_cast<double>(t - o + 1);
  AlphaTerms a;
  a.xi = rec.lambda / (std::sqrt(static_cast<double>(t)) * std::pow(staleness, rec.sigma)) +
         rec.iota;
  a.alpha_raw = p.mu_alpha * a.xi / (1.0 + p.mu_alpha * a.xi);
  a.alpha = std::clamp(a.alpha_raw, p.alpha_min, p.alpha_max);
  return a;
}

/// Gradients of the device-local loss surrogate w.r.t. (lambda, sigma, iota).
///
/// w_up is the current upload, w_o the global model it is compared against,
/// w_prev_up the device's previous upload (origin o_prime) and w_om1 the
/// global model that previous upload was merged into, which produced round o.
/// Returns nullopt when o <= 1 (sqrt(o - 1) undefined).
inline std::optional<ServerControlGradients>
server_control_gradients(const ServerDeviceRecord &rec, const ParamVector &w_up,
                         const ParamVector &w_o, const ParamVector &w_prev_up,
                         const ParamVector &w_om1, std::uint64_t o,
                         std::uint64_t o_prime, const ServerParams &p) {
  if (o <= 1)
    return std::nullopt;
  detail::require(rec.sigma > 0.0, "server_control_gradients: sigma must be > 0");
  const double gap = o > o_prime ? static_cast<double>(o - o_prime) : 1.0;
  const double root = std::sqrt(static_cast<double>(o - 1));
  const double decay = std::pow(gap, rec.sigma);
  const double xi = rec.lambda / (root * decay) + rec.iota;
  const double denom = 1.0 + p.mu_alpha * xi;

  const double inner = dot(w_up - w_o, w_prev_up - w_om1);
  const double scale = rec.eta_i * static_cast<double>(rec.local_epochs);
  const double K = p.mu_alpha * inner / (scale * denom * denom);

  ServerControlGradients g;
  g.d_lambda = K / (root * decay);
  g.d_iota = K;
  if (p.paper_literal_sigma_grad)
    g.d_sigma = -K * std::log(rec.sigma) / (root * decay);
  else
    g.d_sigma = -K * rec.lambda * std::log(gap) / (root * decay);
  return g;
}

inline ServerDeviceRecord update_server_controls(ServerDeviceRecord rec,
                                                 const ServerControlGradients &g,
                                                 const ServerParams &p) {
  detail::require(p.eta_lambda >= 0.0 && p.eta_sigma >= 0.0 && p.eta_iota >= 0.0,
                  "update_server_controls: learning rates must be >= 0");
  rec.lambda = std::clamp(rec.lambda - p.eta_lambda * g.d_lambda, p.lambda_min, p.lambda_max);
  rec.sigma = std::clamp(rec.sigma - p.eta_sigma * g.d_sigma, p.sigma_min, p.sigma_max);
  rec.iota = std::clamp(rec.iota - p.eta_iota * g.d_iota, p.iota_min, p.iota_max);
  return rec;
}

/// One step of the server loop for an admitted upload: adapt the device's
/// controls from its previous upload (when history is still in the ring),
/// compute alpha, mix, bump the version and remember this upload.
inline AggregationOutcome aggregate_upload(GlobalModelStore &store,
                                           ServerDeviceRecord &rec,
                                           Snapshot w_up, Version o,
                                           const ServerParams &p,
                                           bool adapt_controls = true) {
  const Version t = store.version();
  if (o > t)
    throw ProtocolError("aggregate_upload: origin newer than global version");
  detail::require(w_up && w_up->dim() == store.current().dim(),
                  "aggregate_upload: upload dimension mismatch");

  AggregationOutcome out;
  out.accepted = true;
  out.staleness = t - o + 1;

  if (adapt_controls && rec.last_upload) {
    const auto &prev = *rec.last_upload;
    auto before = store.at(prev.arrival);
    if (before) {
      auto g = server_control_gradients(rec, *w_up, store.current(), *prev.model, *before,
                                        round_index(prev.arrival + 1),
                                        round_index(prev.origin), p);
      if (g) {
        rec = update_server_controls(rec, *g, p);
        out.controls_updated = true;
      }
    }
  }

  const auto terms = compute_alpha(rec, round_index(t), round_index(o), p);
  out.alpha = terms.alpha;
  out.xi = terms.xi;
  store.commit(mix(terms.alpha, store.current(), *w_up));
  out.new_version = store.version();
  rec.last_upload = PreviousUpload{std::move(w_up), o, t};
  return out;
}

struct FreshModel {
  Snapshot model;
  Version version;
};

/// Current model when it is newer than the requester's origin.
inline std::optional<FreshModel> fresh_model_response(const GlobalModelStore &store,
                                                      Version o_requester) {
  if (store.version() > o_requester)
    return FreshModel{store.snapshot(), store.version()};
  return std::nullopt;
}

} // namespace fedasmu
