#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fedasmu/device_runtime.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/rng.hpp"
#include "fedasmu/server_agg.hpp"
#include "fedasmu/slot_selector.hpp"
#include "fedasmu/tasks.hpp"

// Central finite-difference checks of every analytic gradient in the
// library. Each forward map below is written directly from its defining
// formula rather than calling the code under test.

namespace fedasmu::gradcheck {

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(const std::function<double(double)> &f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

namespace detail {

inline ParamVector random_vector(std::size_t n, double scale, Rng &rng) {
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector v(n);
  for (auto &x : v)
    x = normal(rng);
  return v;
}

inline double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

} // namespace detail

// ---------------------------------------------------------------------------

/// Mean cross-entropy gradient of both task models on random mini-batches.
inline CheckResult check_task(std::size_t instances = 20, std::uint64_t seed = 11) {
  CheckResult r{"task model gradient", instances, 0, 0.0, 1e-6};
  Rng rng = make_rng(seed, Stream::model_init, 0x9c);
  for (std::size_t k = 0; k < instances; ++k) {
    ModelSpec spec;
    spec.kind = k % 2 == 0 ? ModelKind::linear_softmax : ModelKind::mlp_1hidden;
    spec.input_dim = 4 + uniform_index(rng, 5);
    spec.classes = 2 + static_cast<int>(uniform_index(rng, 4));
    spec.hidden = 3 + uniform_index(rng, 4);
    const auto data = generate_synthetic(40, spec.input_dim, spec.classes, 1.5, seed + k);
    const auto w = detail::random_vector(spec.param_count(), 0.5, rng);
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < 16; ++i)
      batch.push_back(uniform_index(rng, data.size()));
    const auto analytic = loss_and_grad(spec, w, data, batch).grad;
    for (std::size_t c = 0; c < 20; ++c) {
      const auto j = uniform_index(rng, w.dim());
      auto f = [&](double x) {
        ParamVector v = w;
        v[j] = x;
        return loss_and_grad(spec, v, data, batch).loss;
      };
      const double numeric = central_difference(f, w[j], 1e-5);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[j], numeric, 1e-4));
      ++r.coordinates;
    }
  }
  return r;
}

/// Server controls: F = <(w_up - w_o) / (eta L), w_{o-1} + alpha (w' - w_{o-1})>
/// with alpha = mu xi / (1 + mu xi), xi = lambda / (sqrt(o-1) (o-o')^sigma) + iota.
inline CheckResult check_server(std::size_t instances = 24, std::uint64_t seed = 12) {
  CheckResult r{"server control gradients", instances, 0, 0.0, 1e-4};
  Rng rng = make_rng(seed, Stream::model_init, 0x5e);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t d = 3 + uniform_index(rng, 10);
    const auto w_up = detail::random_vector(d, 1.0, rng);
    const auto w_o = detail::random_vector(d, 1.0, rng);
    const auto w_prev = detail::random_vector(d, 1.0, rng);
    const auto w_om1 = detail::random_vector(d, 1.0, rng);
    ServerParams p;
    p.mu_alpha = detail::uniform(rng, 0.5, 2.0);
    ServerDeviceRecord rec;
    rec.lambda = detail::uniform(rng, 0.2, 3.0);
    rec.sigma = detail::uniform(rng, 0.2, 2.0);
    rec.iota = detail::uniform(rng, 0.0, 0.5);
    rec.eta_i = detail::uniform(rng, 0.01, 0.1);
    rec.local_epochs = 1 + static_cast<std::uint32_t>(uniform_index(rng, 5));
    const std::uint64_t o_prime = 1 + uniform_index(rng, 20);
    const std::uint64_t o = o_prime + 2 + uniform_index(rng, 10);
    const auto g = server_control_gradients(rec, w_up, w_o, w_prev, w_om1, o, o_prime, p);

    const double scale = rec.eta_i * rec.local_epochs;
    auto F = [&](double lambda, double sigma, double iota) {
      const double xi = lambda / (std::sqrt(double(o - 1)) * std::pow(double(o - o_prime), sigma)) +
                        iota;
      const double alpha = p.mu_alpha * xi / (1.0 + p.mu_alpha * xi);
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        acc += (w_up[i] - w_o[i]) / scale * (w_om1[i] + alpha * (w_prev[i] - w_om1[i]));
      return acc;
    };
    const double h = 1e-6;
    const double nl = central_difference([&](double x) { return F(x, rec.sigma, rec.iota); },
                                         rec.lambda, h);
    const double ns = central_difference([&](double x) { return F(rec.lambda, x, rec.iota); },
                                         rec.sigma, h);
    const double ni = central_difference([&](double x) { return F(rec.lambda, rec.sigma, x); },
                                         rec.iota, h);
    r.max_rel_error = std::max({r.max_rel_error, rel_error(g->d_lambda, nl, 1e-6),
                                rel_error(g->d_sigma, ns, 1e-6), rel_error(g->d_iota, ni, 1e-6)});
    r.coordinates += 3;
  }
  return r;
}

/// Device controls: F = <grad, w_a + beta (w_g - w_a)> with
/// beta = mu phi / (1 + mu phi), phi = gamma / sqrt(g) (1 - upsilon / sqrt(g-o+1)).
inline CheckResult check_device(std::size_t instances = 24, std::uint64_t seed = 13) {
  CheckResult r{"device control gradients", instances, 0, 0.0, 1e-4};
  Rng rng = make_rng(seed, Stream::model_init, 0xde);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t d = 3 + uniform_index(rng, 10);
    const auto grad = detail::random_vector(d, 1.0, rng);
    const auto w_g = detail::random_vector(d, 1.0, rng);
    const auto w_a = detail::random_vector(d, 1.0, rng);
    DeviceControlState dcs;
    dcs.gamma = detail::uniform(rng, 0.2, 3.0);
    dcs.upsilon = detail::uniform(rng, 0.0, 0.9);
    const double mu = detail::uniform(rng, 0.5, 2.0);
    const std::uint64_t o = 1 + uniform_index(rng, 30);
    const std::uint64_t g = o + 1 + uniform_index(rng, 10);
    const auto an = device_control_gradients(dcs, grad, w_g, w_a, g, o, mu);

    auto F = [&](double gamma, double upsilon) {
      const double phi = gamma / std::sqrt(double(g)) * (1.0 - upsilon / std::sqrt(double(g - o + 1)));
      const double beta = mu * phi / (1.0 + mu * phi);
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        acc += grad[i] * (w_a[i] + beta * (w_g[i] - w_a[i]));
      return acc;
    };
    const double h = 1e-6;
    const double ng = central_difference([&](double x) { return F(x, dcs.upsilon); }, dcs.gamma, h);
    const double nu = central_difference([&](double x) { return F(dcs.gamma, x); }, dcs.upsilon, h);
    r.max_rel_error = std::max(
        {r.max_rel_error, rel_error(an.d_gamma, ng, 1e-6), rel_error(an.d_upsilon, nu, 1e-6)});
    r.coordinates += 2;
  }
  return r;
}

/// Meta-policy log-likelihood of a decision path, from the cell equations.
inline double reference_log_prob(const ParamVector &theta, std::size_t H, std::uint32_t L,
                                 const std::vector<int> &bits) {
  const std::size_t D = 2;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const double *p = theta.values().data() + off;
    off += n;
    return p;
  };
  const double *Wz = take(H * D), *Uz = take(H * H), *bz = take(H);
  const double *Wc = take(H * D), *Uc = take(H * H), *bc = take(H);
  const double *v = take(H), *b = take(1);
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  std::vector<double> h(H, 0.0), next(H);
  double lp = 0.0;
  for (std::size_t l = 1; l <= bits.size(); ++l) {
    const double x[2] = {l == 1 ? 0.0 : double(bits[l - 2]), double(l) / double(L)};
    for (std::size_t i = 0; i < H; ++i) {
      double az = bz[i] + Wz[i * D] * x[0] + Wz[i * D + 1] * x[1];
      double ac = bc[i] + Wc[i * D] * x[0] + Wc[i * D + 1] * x[1];
      for (std::size_t j = 0; j < H; ++j) {
        az += Uz[i * H + j] * h[j];
        ac += Uc[i * H + j] * h[j];
      }
      const double z = sigmoid(az);
      next[i] = (1.0 - z) * h[i] + z * std::tanh(ac);
    }
    h = next;
    double logit = b[0];
    for (std::size_t i = 0; i < H; ++i)
      logit += v[i] * h[i];
    const double p = sigmoid(logit);
    lp += bits[l - 1] ? std::log(p) : std::log(1.0 - p);
  }
  return lp;
}

inline CheckResult check_meta(std::size_t instances = 20, std::uint64_t seed = 14) {
  CheckResult r{"meta-policy log-likelihood gradient", instances, 0, 0.0, 1e-4};
  Rng rng = make_rng(seed, Stream::model_init, 0x3e);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t H = 2 + uniform_index(rng, 15);
    const std::uint32_t L = 2 + static_cast<std::uint32_t>(uniform_index(rng, 9));
    auto policy = MetaPolicy::random(H, seed * 131 + k);
    policy.head_bias() = detail::uniform(rng, -1.0, 1.0);
    const std::uint32_t steps = 1 + static_cast<std::uint32_t>(uniform_index(rng, L - 1));
    std::vector<int> bits(steps);
    for (auto &b : bits)
      b = uniform01(rng) < 0.5 ? 1 : 0;
    const auto analytic = policy.grad_log_prob(L, bits);
    const auto &theta = policy.theta();
    for (std::size_t c = 0; c < 20; ++c) {
      const auto j = uniform_index(rng, theta.dim());
      auto f = [&](double x) {
        ParamVector t = theta;
        t[j] = x;
        return reference_log_prob(t, H, L, bits);
      };
      const double numeric = central_difference(f, theta[j], 1e-5);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[j], numeric, 1e-6));
      ++r.coordinates;
    }
  }
  return r;
}

inline std::vector<CheckResult> run_all() {
  return {check_task(), check_server(), check_device(), check_meta()};
}

} // namespace fedasmu::gradcheck
