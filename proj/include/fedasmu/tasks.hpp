#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedasmu/errors.hpp"
#include "fedasmu/params.hpp"
#include "fedasmu/rng.hpp"

namespace fedasmu {

/// Labelled samples; features stored row-major [n x s].
struct Dataset {
  std::vector<double> features;
  std::vector<int> labels;
  std::size_t dim = 0;
  int classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const double> row(std::size_t i) const noexcept {
    return {features.data() + i * dim, dim};
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.dim = dim;
    out.classes = classes;
    out.features.reserve(idx.size() * dim);
    out.labels.reserve(idx.size());
    for (auto i : idx) {
      auto r = row(i);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  std::vector<std::size_t> class_histogram() const {
    std::vector<std::size_t> h(static_cast<std::size_t>(classes), 0);
    for (int y : labels)
      ++h[static_cast<std::size_t>(y)];
    return h;
  }

  friend bool operator==(const Dataset &, const Dataset &) = default;
};

enum class ModelKind { linear_softmax, mlp_1hidden };

struct ModelSpec {
  ModelKind kind = ModelKind::linear_softmax;
  std::size_t input_dim = 20;
  int classes = 10;
  std::size_t hidden = 16;

  std::size_t param_count() const noexcept {
    const auto c = static_cast<std::size_t>(classes);
    if (kind == ModelKind::linear_softmax)
      return c * input_dim + c;
    return hidden * input_dim + hidden + c * hidden + c;
  }

  friend bool operator==(const ModelSpec &, const ModelSpec &) = default;
};

inline const char *to_string(ModelKind k) {
  return k == ModelKind::linear_softmax ? "linear-softmax" : "mlp-1hidden";
}

inline ModelKind parse_model_kind(const std::string &s) {
  if (s == "linear-softmax")
    return ModelKind::linear_softmax;
  if (s == "mlp-1hidden")
    return ModelKind::mlp_1hidden;
  throw UsageError("unknown model kind '" + s + "'");
}

struct EvalReport {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// ---------------------------------------------------------------------------
// Data generation and partitioning
// ---------------------------------------------------------------------------

/// Gaussian clusters (unit variance) around C centroids with norm ~class_sep.
inline Dataset generate_synthetic(std::size_t n, std::size_t s, int classes,
                                  double class_sep, std::uint64_t seed) {
  detail::require(classes >= 1, "generate_synthetic: classes must be >= 1");
  detail::require(s >= 1, "generate_synthetic: dim must be >= 1");
  detail::require(n >= static_cast<std::size_t>(classes),
                  "generate_synthetic: need n >= classes");
  detail::require(class_sep > 0.0, "generate_synthetic: class_sep must be > 0");

  Rng rng(derive_seed({seed, 0x5eedULL}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = class_sep / std::sqrt(static_cast<double>(s));

  std::vector<double> centroids(static_cast<std::size_t>(classes) * s);
  for (auto &c : centroids)
    c = scale * normal(rng);

  Dataset d;
  d.dim = s;
  d.classes = classes;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    d.labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  shuffle(d.labels.begin(), d.labels.end(), rng);

  d.features.resize(n * s);
  for (std::size_t i = 0; i < n; ++i) {
    const auto *mu = centroids.data() + static_cast<std::size_t>(d.labels[i]) * s;
    for (std::size_t j = 0; j < s; ++j)
      d.features[i * s + j] = mu[j] + normal(rng);
  }
  return d;
}

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// IID held-out split.
inline TrainTestSplit split_train_test(const Dataset &d, double test_fraction,
                                       std::uint64_t seed) {
  detail::require(test_fraction > 0.0 && test_fraction < 1.0,
                  "split_train_test: fraction must be in (0, 1)");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed({seed, 0x7e57ULL}));
  shuffle(idx.begin(), idx.end(), rng);
  auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(d.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, d.size() - 1);
  std::vector<std::size_t> test_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {d.subset(train_idx), d.subset(test_idx)};
}

/// Index-level Dirichlet partition; each sample lands in exactly one shard
/// and no shard is empty.
inline std::vector<std::vector<std::size_t>>
dirichlet_partition_indices(const Dataset &d, std::size_t m, double alpha_dir,
                            std::uint64_t seed) {
  detail::require(m >= 1, "dirichlet_partition: m must be >= 1");
  detail::require(alpha_dir > 0.0, "dirichlet_partition: alpha must be > 0");
  detail::require(m <= d.size(), "dirichlet_partition: more devices than samples");

  Rng rng = make_rng(seed, Stream::partition);
  std::gamma_distribution<double> gamma(alpha_dir, 1.0);

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(d.classes));
  for (std::size_t i = 0; i < d.size(); ++i)
    by_class[static_cast<std::size_t>(d.labels[i])].push_back(i);

  std::vector<std::vector<std::size_t>> shards(m);
  std::vector<double> props(m);
  for (auto &members : by_class) {
    if (members.empty())
      continue;
    shuffle(members.begin(), members.end(), rng);
    double total = 0.0;
    for (auto &p : props) {
      p = gamma(rng);
      total += p;
    }
    if (!(total > 0.0)) {
      // all draws underflowed: hand the whole class to one device
      std::fill(props.begin(), props.end(), 0.0);
      props[uniform_index(rng, m)] = 1.0;
      total = 1.0;
    }
    const double nc = static_cast<double>(members.size());
    double cum = 0.0;
    std::size_t start = 0;
    for (std::size_t k = 0; k < m; ++k) {
      cum += props[k] / total;
      std::size_t stop = (k + 1 == m)
                             ? members.size()
                             : std::min(members.size(),
                                        static_cast<std::size_t>(std::llround(cum * nc)));
      stop = std::max(stop, start);
      shards[k].insert(shards[k].end(), members.begin() + static_cast<std::ptrdiff_t>(start),
                       members.begin() + static_cast<std::ptrdiff_t>(stop));
      start = stop;
    }
  }

  // repair: every device must own at least one sample
  for (auto &shard : shards) {
    if (!shard.empty())
      continue;
    auto largest = std::max_element(shards.begin(), shards.end(),
                                    [](const auto &a, const auto &b) { return a.size() < b.size(); });
    shard.push_back(largest->back());
    largest->pop_back();
  }
  for (auto &shard : shards)
    std::sort(shard.begin(), shard.end());
  return shards;
}

inline std::vector<Dataset> dirichlet_partition(const Dataset &d, std::size_t m,
                                                double alpha_dir, std::uint64_t seed) {
  auto parts = dirichlet_partition_indices(d, m, alpha_dir, seed);
  std::vector<Dataset> out;
  out.reserve(m);
  for (const auto &idx : parts)
    out.push_back(d.subset(idx));
  return out;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (auto &v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto &v : z)
    v /= sum;
}

/// Forward pass for one sample; fills logits (size C) and, for the MLP,
/// hidden activations. Returns nothing; callers softmax as needed.
inline void forward(const ModelSpec &spec, const ParamVector &w,
                    std::span<const double> x, std::span<double> logits,
                    std::span<double> hidden) {
  const auto s = spec.input_dim;
  const auto C = static_cast<std::size_t>(spec.classes);
  if (spec.kind == ModelKind::linear_softmax) {
    const double *W = w.values().data();
    const double *b = W + C * s;
    for (std::size_t c = 0; c < C; ++c) {
      double z = b[c];
      for (std::size_t j = 0; j < s; ++j)
        z += W[c * s + j] * x[j];
      logits[c] = z;
    }
    return;
  }
  const auto H = spec.hidden;
  const double *W1 = w.values().data();
  const double *b1 = W1 + H * s;
  const double *W2 = b1 + H;
  const double *b2 = W2 + C * H;
  for (std::size_t k = 0; k < H; ++k) {
    double a = b1[k];
    for (std::size_t j = 0; j < s; ++j)
      a += W1[k * s + j] * x[j];
    hidden[k] = std::tanh(a);
  }
  for (std::size_t c = 0; c < C; ++c) {
    double z = b2[c];
    for (std::size_t k = 0; k < H; ++k)
      z += W2[c * H + k] * hidden[k];
    logits[c] = z;
  }
}

inline void check_model_args(const ModelSpec &spec, const ParamVector &w,
                             const Dataset &data) {
  if (w.dim() != spec.param_count())
    throw UsageError("model parameter count mismatch: expected " +
                     std::to_string(spec.param_count()) + ", got " +
                     std::to_string(w.dim()));
  if (data.dim != spec.input_dim || data.classes > spec.classes)
    throw UsageError("dataset shape does not match model spec");
}

} // namespace detail

/// Small random initial weights (zero biases).
inline ParamVector init_params(const ModelSpec &spec, std::uint64_t seed,
                               double scale = 0.1) {
  Rng rng = make_rng(seed, Stream::model_init);
  std::normal_distribution<double> normal(0.0, scale);
  ParamVector w(spec.param_count());
  for (auto &v : w)
    v = normal(rng);
  return w;
}

/// Mean cross-entropy and its exact gradient over the selected rows.
inline LossGrad loss_and_grad(const ModelSpec &spec, const ParamVector &w,
                              const Dataset &data,
                              std::span<const std::size_t> batch) {
  detail::check_model_args(spec, w, data);
  detail::require(!batch.empty(), "loss_and_grad: empty batch");

  const auto s = spec.input_dim;
  const auto C = static_cast<std::size_t>(spec.classes);
  const auto H = spec.hidden;
  LossGrad out{0.0, ParamVector(w.dim())};
  std::vector<double> logits(C), hidden(H), dh(H);
  double *G = out.grad.values().data();
  const double *Wp = w.values().data();

  for (auto i : batch) {
    auto x = data.row(i);
    const auto y = static_cast<std::size_t>(data.labels[i]);
    detail::forward(spec, w, x, logits, hidden);
    detail::softmax_inplace(logits);
    out.loss -= std::log(std::max(logits[y], std::numeric_limits<double>::min()));
    logits[y] -= 1.0; // now dL/dz

    if (spec.kind == ModelKind::linear_softmax) {
      double *gW = G;
      double *gb = G + C * s;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < s; ++j)
          gW[c * s + j] += logits[c] * x[j];
        gb[c] += logits[c];
      }
      continue;
    }
    double *gW1 = G;
    double *gb1 = gW1 + H * s;
    double *gW2 = gb1 + H;
    double *gb2 = gW2 + C * H;
    const double *W2 = Wp + H * s + H;
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t k = 0; k < H; ++k) {
        gW2[c * H + k] += logits[c] * hidden[k];
        dh[k] += W2[c * H + k] * logits[c];
      }
      gb2[c] += logits[c];
    }
    for (std::size_t k = 0; k < H; ++k) {
      const double da = dh[k] * (1.0 - hidden[k] * hidden[k]);
      for (std::size_t j = 0; j < s; ++j)
        gW1[k * s + j] += da * x[j];
      gb1[k] += da;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto &g : out.grad)
    g *= inv;
  return out;
}

inline LossGrad loss_and_grad(const ModelSpec &spec, const ParamVector &w,
                              const Dataset &data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_and_grad(spec, w, data, all);
}

/// Shuffled visiting order for one local epoch. Consumes rng exactly as
/// sgd_epoch does, so a copy of the rng previews the next epoch's batches.
inline std::vector<std::size_t> epoch_order(std::size_t n, Rng &rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);
  return order;
}

/// One pass of mini-batch SGD over a seeded shuffle of the shard.
inline ParamVector sgd_epoch(const ModelSpec &spec, ParamVector w,
                             const Dataset &shard, double eta,
                             std::size_t batch_size, Rng &rng) {
  detail::require(!shard.empty(), "sgd_epoch: empty shard");
  detail::require(eta >= 0.0, "sgd_epoch: learning rate must be >= 0");
  detail::require(batch_size >= 1, "sgd_epoch: batch size must be >= 1");
  const auto order = epoch_order(shard.size(), rng);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto stop = std::min(order.size(), start + batch_size);
    std::span<const std::size_t> batch(order.data() + start, stop - start);
    auto lg = loss_and_grad(spec, w, shard, batch);
    axpy(-eta, lg.grad, w);
  }
  return w;
}

inline EvalReport evaluate(const ModelSpec &spec, const ParamVector &w,
                           const Dataset &test) {
  detail::require(!test.empty(), "evaluate: empty test set");
  detail::check_model_args(spec, w, test);
  const auto C = static_cast<std::size_t>(spec.classes);
  std::vector<double> logits(C), hidden(spec.hidden);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    detail::forward(spec, w, test.row(i), logits, hidden);
    const auto pred = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    const auto y = static_cast<std::size_t>(test.labels[i]);
    if (pred == y)
      ++correct;
    detail::softmax_inplace(logits);
    loss -= std::log(std::max(logits[y], std::numeric_limits<double>::min()));
  }
  const double n = static_cast<double>(test.size());
  return {static_cast<double>(correct) / n, loss / n};
}

// ---------------------------------------------------------------------------
// CSV archive format: header f0..f{s-1},label
// ---------------------------------------------------------------------------

inline void write_dataset_csv(std::ostream &os, const Dataset &d) {
  for (std::size_t j = 0; j < d.dim; ++j)
    os << 'f' << j << ',';
  os << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << buf << ',';
    }
    os << d.labels[i] << '\n';
  }
}

/// classes <= 0 infers max(label) + 1.
inline Dataset read_dataset_csv(std::istream &is, int classes = 0) {
  std::string line;
  if (!std::getline(is, line))
    throw UsageError("dataset csv: missing header");
  Dataset d;
  {
    std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (cols < 2 || line.substr(line.rfind(',') + 1) != "label")
      throw UsageError("dataset csv: header must be f0..f{s-1},label");
    d.dim = cols - 1;
  }
  int max_label = -1;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      try {
        if (col < d.dim) {
          d.features.push_back(std::stod(cell));
        } else if (col == d.dim) {
          d.labels.push_back(std::stoi(cell));
          max_label = std::max(max_label, d.labels.back());
        }
      } catch (const std::exception &) {
        throw UsageError("dataset csv: bad value on line " + std::to_string(lineno));
      }
      ++col;
    }
    if (col != d.dim + 1)
      throw UsageError("dataset csv: wrong column count on line " + std::to_string(lineno));
    if (d.labels.back() < 0)
      throw UsageError("dataset csv: negative label on line " + std::to_string(lineno));
  }
  d.classes = classes > 0 ? classes : max_label + 1;
  if (max_label >= d.classes)
    throw UsageError("dataset csv: label exceeds class count");
  return d;
}

} // namespace fedasmu
