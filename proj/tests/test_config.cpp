#include <gtest/gtest.h>

#include <sstream>

#include "fedasmu/config.hpp"

using namespace fedasmu;

namespace {

ExperimentConfig parse(const std::string &text) {
  std::istringstream is(text);
  return parse_config(is, "test.ini");
}

std::string error_of(const std::string &text) {
  try {
    parse(text);
  } catch (const ConfigError &e) {
    return e.what();
  }
  return "";
}

// Random but valid configuration; fields are drawn so the result always passes validate().
ExperimentConfig random_config(Rng &rng) {
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  auto n = [&](std::uint64_t lo, std::uint64_t hi) { return lo + uniform_index(rng, hi - lo + 1); };
  ExperimentConfig c;
  c.out_dir = "runs/r" + std::to_string(n(0, 999));
  c.seeds.clear();
  for (std::uint64_t k = 0, cnt = n(1, 4); k < cnt; ++k)
    c.seeds.push_back(n(0, 1000));
  c.target_accuracy = u(0.1, 0.9);
  c.model = n(0, 1) ? ModelKind::mlp_1hidden : ModelKind::linear_softmax;
  c.hidden = n(1, 64);
  c.dataset.samples = n(100, 5000);
  c.dataset.features = n(1, 30);
  c.dataset.classes = n(2, 12);
  c.dataset.class_sep = u(0.1, 5);
  c.dataset.test_fraction = u(0.05, 0.5);
  c.run.dirichlet_alpha = u(0.01, 10);
  c.run.m = n(2, 200);
  c.run.m_prime = n(1, c.run.m);
  c.run.T = n(1, 1000);
  c.run.trigger_period = u(0.1, 20);
  c.run.parallelism_cap = u(0.01, 1);
  c.run.heterogeneity_ratio = u(1, 10);
  c.run.base_epoch_time = u(0.1, 3);
  c.run.uplink = u(0, 2);
  c.run.downlink = u(0, 2);
  c.run.eval_interval = n(1, 10);
  c.run.max_virtual_time = n(0, 1) ? std::numeric_limits<double>::infinity() : u(10, 1e4);
  c.run.fedavg_sample_fraction = u(0, 1);
  c.run.server.tau = n(1, 200);
  c.run.server.mu_alpha = u(0.1, 3);
  c.run.server.eta_lambda = u(0, 1e-2);
  c.run.server.paper_literal_sigma_grad = n(0, 1);
  c.run.device.eta_i = u(1e-3, 0.5);
  c.run.device.batch_size = n(1, 128);
  c.run.device.local_epochs = n(2, 10);
  c.run.device.blocking_fresh = n(0, 1);
  c.run.device.rho = u(0, 1);
  c.run.selector.hidden = n(1, 32);
  c.run.selector.epsilon_start = u(0, 1);
  c.run.selector.warmup_rounds = n(0, 10);
  c.run.selector.psi_q = u(0, 0.99);
  c.strategies.clear();
  for (const auto &[kind, _] : strategy_names)
    if (n(0, 1))
      c.strategies.push_back(kind);
  if (c.strategies.empty())
    c.strategies.push_back(StrategyKind::fedavg);
  c.run.strategy.fedbuff_k = n(1, 20);
  c.run.strategy.fedasync_a = u(0, 2);
  return c;
}

} // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const auto c = parse("");
  EXPECT_EQ(c, ExperimentConfig{});
  EXPECT_EQ(c.run.server.tau, 99u);
  EXPECT_EQ(c.run.device.local_epochs, 5u);
}

TEST(Config, MinimalFile) {
  const auto c = parse("# comment\n[sim]\nm = 10\nm_prime = 2 ; trailing\n\n[server]\ntau = 5\n"
                       "[strategy]\nkinds = FedASMU, FedAvg\n");
  EXPECT_EQ(c.run.m, 10u);
  EXPECT_EQ(c.run.m_prime, 2u);
  EXPECT_EQ(c.run.server.tau, 5u);
  EXPECT_EQ(c.strategies, (std::vector<StrategyKind>{StrategyKind::fedasmu, StrategyKind::fedavg}));
}

TEST(Config, ZeroStalenessBoundIsRejected) {
  const auto msg = error_of("[server]\ntau = 0\n");
  EXPECT_NE(msg.find("tau"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyReportsLine) {
  const auto msg = error_of("[sim]\nm = 10\nbogus = 1\n");
  EXPECT_NE(msg.find("test.ini:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
}

TEST(Config, MalformedInputs) {
  EXPECT_NE(error_of("[nope]\n").find(":1:"), std::string::npos);
  EXPECT_NE(error_of("m = 3\n").find("outside"), std::string::npos);
  EXPECT_NE(error_of("[sim]\nm 3\n").find("key = value"), std::string::npos);
  EXPECT_NE(error_of("[sim]\nm = 3\nm = 4\n").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("[sim]\nm = three\n").find(":2:"), std::string::npos);
  EXPECT_NE(error_of("[sim]\nm = -3\n").find(":2:"), std::string::npos);
  EXPECT_NE(error_of("[strategy]\nkinds = FedFoo\n").find("FedFoo"), std::string::npos);
  EXPECT_NE(error_of("[device]\nblocking_fresh = maybe\n").find(":2:"), std::string::npos);
  EXPECT_NE(error_of("[sim]\nm = 10\nm_prime = 20\n").find("m_prime"), std::string::npos);
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW(load_config("/nonexistent/dir/x.ini"), ConfigError);
}

TEST(Config, DumpParseRoundTrip) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_config(rng);
    ASSERT_NO_THROW(validate(c));
    const auto text = dump_config(c);
    const auto back = parse(text);
    EXPECT_EQ(back, c) << text;
    EXPECT_EQ(dump_config(back), text);
  }
}

TEST(Config, HashTracksResultAffectingFields) {
  ExperimentConfig a;
  auto b = a;
  b.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.run.server.eta_sigma *= 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  auto c = a;
  c.seeds = {1, 2, 3};
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ShippedConfigs, AllParse) {
  for (const char *name : {"minimal.ini", "default.ini", "ablation.ini", "mlp_baselines.ini"})
    EXPECT_NO_THROW(load_config(std::string(FEDASMU_CONFIG_DIR) + "/" + name)) << name;
}

TEST(ShippedConfigs, DefaultFileMatchesBuiltIns) {
  auto c = load_config(std::string(FEDASMU_CONFIG_DIR) + "/default.ini");
  ExperimentConfig want;
  want.out_dir = c.out_dir;
  want.strategies = c.strategies;
  EXPECT_EQ(c, want) << dump_config(c);
}
