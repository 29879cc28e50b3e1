#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedasmu/tasks.hpp"

using namespace fedasmu;

namespace {

std::vector<std::size_t> all_rows(const Dataset &d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

// Loss written out directly for the linear model: mean_i -log softmax(Wx+b)_y.
double linear_loss_reference(const ModelSpec &spec, const ParamVector &w, const Dataset &d) {
  const auto C = static_cast<std::size_t>(spec.classes), s = spec.input_dim;
  double total = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::vector<double> z(C);
    for (std::size_t c = 0; c < C; ++c) {
      z[c] = w[C * s + c];
      for (std::size_t j = 0; j < s; ++j)
        z[c] += w[c * s + j] * d.features[i * s + j];
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double lse = 0;
    for (double v : z)
      lse += std::exp(v - mx);
    total += mx + std::log(lse) - z[static_cast<std::size_t>(d.labels[i])];
  }
  return total / static_cast<double>(d.size());
}

} // namespace

TEST(Synthetic, DeterministicPerSeed) {
  EXPECT_EQ(generate_synthetic(300, 5, 4, 2.0, 11), generate_synthetic(300, 5, 4, 2.0, 11));
  EXPECT_FALSE(generate_synthetic(300, 5, 4, 2.0, 11) == generate_synthetic(300, 5, 4, 2.0, 12));
}

TEST(Synthetic, CoversAllClasses) {
  const auto d = generate_synthetic(1000, 20, 10, 2.0, 3);
  for (auto h : d.class_histogram())
    EXPECT_EQ(h, 100u);
}

TEST(Synthetic, WellSeparatedTwoClassIsLearnable) {
  const auto d = generate_synthetic(400, 10, 2, 10.0, 4);
  ModelSpec spec{ModelKind::linear_softmax, 10, 2, 16};
  ParamVector w(spec.param_count());
  // plain full-batch gradient descent as the oracle fit
  for (int it = 0; it < 300; ++it)
    axpy(-0.5, loss_and_grad(spec, w, d).grad, w);
  EXPECT_GE(evaluate(spec, w, d).accuracy, 0.99);
}

TEST(Split, SizesAndDisjointness) {
  const auto d = generate_synthetic(500, 3, 5, 2.0, 1);
  const auto s = split_train_test(d, 0.2, 1);
  EXPECT_EQ(s.test.size(), 100u);
  EXPECT_EQ(s.train.size(), 400u);
}

TEST(Partition, ExactCoverAndNoEmptyShard) {
  const auto d = generate_synthetic(1000, 4, 10, 2.0, 2);
  for (double alpha : {0.05, 0.5, 5.0}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto parts = dirichlet_partition_indices(d, 20, alpha, seed);
      std::vector<std::size_t> all;
      for (const auto &p : parts) {
        EXPECT_FALSE(p.empty());
        all.insert(all.end(), p.begin(), p.end());
      }
      std::sort(all.begin(), all.end());
      EXPECT_EQ(all, all_rows(d));
    }
  }
}

TEST(Partition, DeterministicPerSeed) {
  const auto d = generate_synthetic(500, 4, 5, 2.0, 2);
  EXPECT_EQ(dirichlet_partition_indices(d, 8, 0.5, 3), dirichlet_partition_indices(d, 8, 0.5, 3));
}

TEST(Partition, LargeConcentrationApproachesGlobalMix) {
  const auto d = generate_synthetic(4000, 4, 10, 2.0, 2);
  const auto shards = dirichlet_partition(d, 4, 1e6, 9);
  for (const auto &s : shards) {
    const auto h = s.class_histogram();
    for (auto c : h)
      EXPECT_NEAR(static_cast<double>(c) / static_cast<double>(s.size()), 0.1, 0.05);
  }
}

TEST(Partition, SmallConcentrationIsSkewed) {
  const auto d = generate_synthetic(2000, 4, 10, 2.0, 2);
  std::vector<double> best;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    double top = 0;
    for (const auto &s : dirichlet_partition(d, 10, 0.1, seed)) {
      const auto h = s.class_histogram();
      top = std::max(top, static_cast<double>(*std::max_element(h.begin(), h.end())) /
                              static_cast<double>(s.size()));
    }
    best.push_back(top);
  }
  std::sort(best.begin(), best.end());
  EXPECT_GT(0.5 * (best[9] + best[10]), 0.6);
}

TEST(Loss, ZeroWeightsGiveLogC) {
  const auto d = generate_synthetic(50, 6, 7, 2.0, 1);
  ModelSpec spec{ModelKind::linear_softmax, 6, 7, 16};
  EXPECT_NEAR(loss_and_grad(spec, ParamVector(spec.param_count()), d).loss, std::log(7.0), 1e-9);
}

TEST(Loss, MatchesDirectFormula) {
  const auto d = generate_synthetic(60, 5, 4, 2.0, 1);
  ModelSpec spec{ModelKind::linear_softmax, 5, 4, 16};
  const auto w = init_params(spec, 3, 0.7);
  EXPECT_NEAR(loss_and_grad(spec, w, d).loss, linear_loss_reference(spec, w, d), 1e-12);
}

TEST(Loss, DuplicatedBatchIsInvariant) {
  const auto d = generate_synthetic(30, 4, 3, 2.0, 1);
  for (auto kind : {ModelKind::linear_softmax, ModelKind::mlp_1hidden}) {
    ModelSpec spec{kind, 4, 3, 5};
    const auto w = init_params(spec, 2, 0.5);
    std::vector<std::size_t> once{0, 3, 7, 9}, twice{0, 0, 3, 3, 7, 7, 9, 9};
    const auto a = loss_and_grad(spec, w, d, once), b = loss_and_grad(spec, w, d, twice);
    EXPECT_NEAR(a.loss, b.loss, 1e-14);
    for (std::size_t k = 0; k < w.dim(); ++k)
      EXPECT_NEAR(a.grad[k], b.grad[k], 1e-14);
  }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(77);
  for (auto kind : {ModelKind::linear_softmax, ModelKind::mlp_1hidden}) {
    for (int inst = 0; inst < 5; ++inst) {
      ModelSpec spec{kind, 6, 4, 7};
      const auto d = generate_synthetic(25, 6, 4, 2.0, 10 + inst);
      const auto w = init_params(spec, 20 + inst, 0.6);
      const auto g = loss_and_grad(spec, w, d).grad;
      for (int c = 0; c < 20; ++c) {
        const auto j = uniform_index(rng, w.dim());
        auto wp = w, wm = w;
        wp[j] += 1e-5;
        wm[j] -= 1e-5;
        const double fd = (loss_and_grad(spec, wp, d).loss - loss_and_grad(spec, wm, d).loss) / 2e-5;
        EXPECT_LE(std::abs(fd - g[j]) / std::max({std::abs(fd), std::abs(g[j]), 1e-4}), 1e-6);
      }
    }
  }
}

TEST(Sgd, ZeroStepLeavesWeights) {
  const auto d = generate_synthetic(40, 3, 3, 2.0, 1);
  ModelSpec spec{ModelKind::mlp_1hidden, 3, 3, 4};
  const auto w = init_params(spec, 1);
  Rng rng(1);
  EXPECT_EQ(sgd_epoch(spec, w, d, 0.0, 8, rng), w);
}

TEST(Sgd, FullBatchEqualsOneGradientStep) {
  const auto d = generate_synthetic(40, 3, 3, 2.0, 1);
  ModelSpec spec{ModelKind::linear_softmax, 3, 3, 4};
  const auto w = init_params(spec, 1);
  Rng rng(3);
  const auto got = sgd_epoch(spec, w, d, 0.1, d.size(), rng);
  auto want = w;
  axpy(-0.1, loss_and_grad(spec, w, d).grad, want);
  for (std::size_t k = 0; k < w.dim(); ++k)
    EXPECT_NEAR(got[k], want[k], 1e-14);
}

TEST(Sgd, DeterministicUnderSameRng) {
  const auto d = generate_synthetic(64, 3, 3, 2.0, 1);
  ModelSpec spec{ModelKind::mlp_1hidden, 3, 3, 4};
  const auto w = init_params(spec, 1);
  Rng a(5), b(5);
  EXPECT_EQ(sgd_epoch(spec, w, d, 0.1, 8, a), sgd_epoch(spec, w, d, 0.1, 8, b));
}

TEST(Evaluate, RandomWeightsNearChance) {
  const auto d = generate_synthetic(2000, 20, 10, 2.0, 1);
  ModelSpec spec;
  double sum = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed)
    sum += evaluate(spec, init_params(spec, seed, 0.01), d).accuracy;
  EXPECT_NEAR(sum / 10, 0.1, 0.05);
}

TEST(Evaluate, OracleWeightsOnSeparableSet) {
  // two classes on the first axis; w picks the sign
  Dataset d;
  d.dim = 1;
  d.classes = 2;
  d.features = {-3, -1, -2, 1, 2, 3};
  d.labels = {0, 0, 0, 1, 1, 1};
  ModelSpec spec{ModelKind::linear_softmax, 1, 2, 4};
  const ParamVector w{-1, 1, 0, 0};
  const auto r = evaluate(spec, w, d);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
}

TEST(DatasetCsv, RoundTrip) {
  const auto d = generate_synthetic(50, 3, 4, 2.0, 6);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  EXPECT_EQ(read_dataset_csv(ss, 4), d);
}

TEST(DatasetCsv, RejectsMalformedRows) {
  std::stringstream bad("f0,f1,label\n1.0,2.0,1\n1.0,x,0\n");
  EXPECT_THROW(read_dataset_csv(bad), UsageError);
  std::stringstream short_row("f0,f1,label\n1.0,1\n");
  EXPECT_THROW(read_dataset_csv(short_row), UsageError);
}

TEST(ModelKindNames, RoundTrip) {
  for (auto k : {ModelKind::linear_softmax, ModelKind::mlp_1hidden})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("resnet"), UsageError);
}
