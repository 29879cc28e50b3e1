#pragma once

#include "fedasmu/sim_engine.hpp"

namespace fedasmu::testing {

// A few hundred samples, 20 devices, short rounds. Runs in well under a second.
inline RunConfig small_config(StrategyKind kind = StrategyKind::fedasmu) {
  RunConfig c;
  c.m = 20;
  c.m_prime = 4;
  c.T = 60;
  c.trigger_period = 1.0;
  c.parallelism_cap = 0.4;
  c.uplink = 0.3;
  c.downlink = 0.2;
  c.eval_interval = 5;
  c.seed = 3;
  c.server.tau = 8;
  c.device.local_epochs = 4;
  c.device.batch_size = 16;
  c.device.eta_i = 0.1;
  c.strategy.kind = kind;
  return c;
}

struct SmallWorld {
  ModelSpec spec{ModelKind::linear_softmax, 6, 4, 8};
  FederatedData data;

  explicit SmallWorld(const RunConfig &cfg, std::size_t samples = 600) {
    const auto split = split_train_test(generate_synthetic(samples, 6, 4, 2.5, 11), 0.2, 11);
    data = prepare_federated_data(split.train, split.test, cfg);
  }
};

} // namespace fedasmu::testing
