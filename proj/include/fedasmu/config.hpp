#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "fedasmu/errors.hpp"
#include "fedasmu/sim_engine.hpp"
#include "fedasmu/strategies.hpp"
#include "fedasmu/tasks.hpp"

namespace fedasmu {

/// Where the data comes from. With an empty csv_path a synthetic Gaussian
/// mixture is generated from (samples, features, classes, class_sep, seed).
struct DatasetSpec {
  std::string csv_path;
  std::size_t samples = 5000;
  std::size_t features = 20;
  std::size_t classes = 10;
  double class_sep = 2.0;
  std::uint64_t seed = 7;
  double test_fraction = 0.2;

  friend bool operator==(const DatasetSpec &, const DatasetSpec &) = default;
};

struct ExperimentConfig {
  RunConfig run;
  ModelKind model = ModelKind::linear_softmax;
  std::size_t hidden = 16;
  DatasetSpec dataset;
  std::vector<StrategyKind> strategies{StrategyKind::fedasmu};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  double target_accuracy = 0.6;
  std::string out_dir = "runs";

  ModelSpec model_spec() const {
    ModelSpec s;
    s.kind = model;
    s.input_dim = dataset.features;
    s.classes = dataset.classes;
    s.hidden = hidden;
    return s;
  }

  friend bool operator==(const ExperimentConfig &, const ExperimentConfig &) = default;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty())
      out.push_back(t);
  return out;
}

inline double to_double(const std::string &s) {
  if (s == "inf")
    return std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || std::isnan(v))
    throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t to_uint(const std::string &s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

inline bool to_bool(const std::string &s) {
  if (s == "true" || s == "1" || s == "yes")
    return true;
  if (s == "false" || s == "0" || s == "no")
    return false;
  throw ConfigError("expected true/false, got '" + s + "'");
}

inline std::string fmt_double(double v) {
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char *section;
  const char *key;
  std::function<std::string(const ExperimentConfig &)> get;
  std::function<void(ExperimentConfig &, const std::string &)> set;
};

#define FEDASMU_DBL(sec, name, expr)                                                               \
  Field{sec, name, [](const ExperimentConfig &c) { return fmt_double(c.expr); },                   \
        [](ExperimentConfig &c, const std::string &v) { c.expr = to_double(v); }}
#define FEDASMU_UINT(sec, name, expr)                                                              \
  Field{sec, name, [](const ExperimentConfig &c) { return std::to_string(c.expr); },               \
        [](ExperimentConfig &c, const std::string &v) {                                            \
          using T = std::remove_reference_t<decltype(c.expr)>;                                     \
          const auto u = to_uint(v);                                                               \
          if (u > std::numeric_limits<T>::max())                                                   \
            throw ConfigError("value out of range: " + v);                                         \
          c.expr = static_cast<T>(u);                                                              \
        }}
#define FEDASMU_BOOL(sec, name, expr)                                                              \
  Field{sec, name, [](const ExperimentConfig &c) { return std::string(c.expr ? "true" : "false"); }, \
        [](ExperimentConfig &c, const std::string &v) { c.expr = to_bool(v); }}

inline const std::vector<Field> &fields() {
  static const std::vector<Field> table = {
      Field{"experiment", "out_dir", [](const ExperimentConfig &c) { return c.out_dir; },
            [](ExperimentConfig &c, const std::string &v) { c.out_dir = v; }},
      Field{"experiment", "seeds",
            [](const ExperimentConfig &c) {
              std::string s;
              for (auto x : c.seeds)
                s += (s.empty() ? "" : ",") + std::to_string(x);
              return s;
            },
            [](ExperimentConfig &c, const std::string &v) {
              c.seeds.clear();
              for (const auto &x : split_list(v))
                c.seeds.push_back(to_uint(x));
            }},
      FEDASMU_DBL("experiment", "target_accuracy", target_accuracy),

      Field{"task", "model", [](const ExperimentConfig &c) { return to_string(c.model); },
            [](ExperimentConfig &c, const std::string &v) {
              try {
                c.model = parse_model_kind(v);
              } catch (const UsageError &e) {
                throw ConfigError(e.what());
              }
            }},
      FEDASMU_UINT("task", "hidden", hidden),

      Field{"dataset", "csv_path", [](const ExperimentConfig &c) { return c.dataset.csv_path; },
            [](ExperimentConfig &c, const std::string &v) { c.dataset.csv_path = v; }},
      FEDASMU_UINT("dataset", "samples", dataset.samples),
      FEDASMU_UINT("dataset", "features", dataset.features),
      FEDASMU_UINT("dataset", "classes", dataset.classes),
      FEDASMU_DBL("dataset", "class_sep", dataset.class_sep),
      FEDASMU_UINT("dataset", "seed", dataset.seed),
      FEDASMU_DBL("dataset", "test_fraction", dataset.test_fraction),
      FEDASMU_DBL("dataset", "dirichlet_alpha", run.dirichlet_alpha),

      FEDASMU_UINT("sim", "m", run.m),
      FEDASMU_UINT("sim", "m_prime", run.m_prime),
      FEDASMU_UINT("sim", "T", run.T),
      FEDASMU_DBL("sim", "trigger_period", run.trigger_period),
      FEDASMU_DBL("sim", "parallelism_cap", run.parallelism_cap),
      FEDASMU_DBL("sim", "heterogeneity_ratio", run.heterogeneity_ratio),
      FEDASMU_DBL("sim", "base_epoch_time", run.base_epoch_time),
      FEDASMU_DBL("sim", "uplink", run.uplink),
      FEDASMU_DBL("sim", "downlink", run.downlink),
      FEDASMU_UINT("sim", "eval_interval", run.eval_interval),
      FEDASMU_DBL("sim", "max_virtual_time", run.max_virtual_time),
      FEDASMU_DBL("sim", "fedavg_sample_fraction", run.fedavg_sample_fraction),

      FEDASMU_UINT("server", "tau", run.server.tau),
      FEDASMU_DBL("server", "mu_alpha", run.server.mu_alpha),
      FEDASMU_DBL("server", "alpha_min", run.server.alpha_min),
      FEDASMU_DBL("server", "alpha_max", run.server.alpha_max),
      FEDASMU_DBL("server", "lambda0", run.server.lambda0),
      FEDASMU_DBL("server", "sigma0", run.server.sigma0),
      FEDASMU_DBL("server", "iota0", run.server.iota0),
      FEDASMU_DBL("server", "eta_lambda", run.server.eta_lambda),
      FEDASMU_DBL("server", "eta_sigma", run.server.eta_sigma),
      FEDASMU_DBL("server", "eta_iota", run.server.eta_iota),
      FEDASMU_DBL("server", "lambda_min", run.server.lambda_min),
      FEDASMU_DBL("server", "lambda_max", run.server.lambda_max),
      FEDASMU_DBL("server", "sigma_min", run.server.sigma_min),
      FEDASMU_DBL("server", "sigma_max", run.server.sigma_max),
      FEDASMU_DBL("server", "iota_min", run.server.iota_min),
      FEDASMU_DBL("server", "iota_max", run.server.iota_max),
      FEDASMU_BOOL("server", "paper_literal_sigma_grad", run.server.paper_literal_sigma_grad),

      FEDASMU_DBL("device", "eta_i", run.device.eta_i),
      FEDASMU_UINT("device", "batch_size", run.device.batch_size),
      FEDASMU_UINT("device", "local_epochs", run.device.local_epochs),
      FEDASMU_DBL("device", "mu_beta", run.device.mu_beta),
      FEDASMU_DBL("device", "beta_max", run.device.beta_max),
      FEDASMU_DBL("device", "gamma0", run.device.gamma0),
      FEDASMU_DBL("device", "upsilon0", run.device.upsilon0),
      FEDASMU_DBL("device", "baseline0", run.device.baseline0),
      FEDASMU_DBL("device", "rho", run.device.rho),
      FEDASMU_DBL("device", "eta_gamma", run.device.eta_gamma),
      FEDASMU_DBL("device", "eta_upsilon", run.device.eta_upsilon),
      FEDASMU_DBL("device", "gamma_min", run.device.gamma_min),
      FEDASMU_DBL("device", "gamma_max", run.device.gamma_max),
      FEDASMU_DBL("device", "upsilon_min", run.device.upsilon_min),
      FEDASMU_DBL("device", "upsilon_max", run.device.upsilon_max),
      FEDASMU_BOOL("device", "blocking_fresh", run.device.blocking_fresh),

      FEDASMU_UINT("selector", "hidden", run.selector.hidden),
      FEDASMU_DBL("selector", "eta_rl", run.selector.eta_rl),
      FEDASMU_DBL("selector", "epsilon_start", run.selector.epsilon_start),
      FEDASMU_DBL("selector", "epsilon_end", run.selector.epsilon_end),
      FEDASMU_UINT("selector", "warmup_rounds", run.selector.warmup_rounds),
      FEDASMU_DBL("selector", "warmup_epsilon", run.selector.warmup_epsilon),
      FEDASMU_DBL("selector", "phi_q", run.selector.phi_q),
      FEDASMU_DBL("selector", "psi_q", run.selector.psi_q),

      Field{"strategy", "kinds",
            [](const ExperimentConfig &c) {
              std::string s;
              for (auto k : c.strategies)
                s += (s.empty() ? "" : ",") + to_string(k);
              return s;
            },
            [](ExperimentConfig &c, const std::string &v) {
              c.strategies.clear();
              for (const auto &x : split_list(v)) {
                try {
                  c.strategies.push_back(parse_strategy(x));
                } catch (const UsageError &e) {
                  throw ConfigError(e.what());
                }
              }
            }},
      FEDASMU_DBL("strategy", "fedasync_a", run.strategy.fedasync_a),
      FEDASMU_DBL("strategy", "fedasync_alpha0", run.strategy.fedasync_alpha0),
      FEDASMU_UINT("strategy", "fedbuff_k", run.strategy.fedbuff_k),
  };
  return table;
}

#undef FEDASMU_DBL
#undef FEDASMU_UINT
#undef FEDASMU_BOOL

inline const Field *find_field(const std::string &section, const std::string &key) {
  for (const auto &f : fields())
    if (section == f.section && key == f.key)
      return &f;
  return nullptr;
}

} // namespace config_detail

/// Checks every cross-field constraint; throws UsageError.
inline void validate(const ExperimentConfig &c) {
  using detail::require;
  require(!c.seeds.empty(), "seed list must be non-empty");
  require(!c.strategies.empty(), "strategy list must be non-empty");
  require(c.target_accuracy > 0.0 && c.target_accuracy < 1.0, "target_accuracy must be in (0, 1)");
  require(c.hidden >= 1, "task hidden size must be >= 1");
  const auto &d = c.dataset;
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0, "test_fraction must be in (0, 1)");
  if (d.csv_path.empty()) {
    require(d.samples >= 2, "dataset samples must be >= 2");
    require(d.features >= 1 && d.classes >= 2, "dataset needs >= 1 feature and >= 2 classes");
    require(d.class_sep > 0.0, "class_sep must be > 0");
  }
  for (auto k : c.strategies) {
    RunConfig r = c.run;
    r.strategy.kind = k;
    validate(r);
  }
}

/// Parses a sectioned key = value file. Unknown sections/keys, duplicates and
/// malformed values are rejected with the offending line number.
inline ExperimentConfig parse_config(std::istream &is, const std::string &origin = "<config>") {
  using namespace config_detail;
  ExperimentConfig cfg;
  std::string section;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string &msg) -> ConfigError {
    return ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty())
      continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        throw fail("malformed section header");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      bool known = false;
      for (const auto &f : fields())
        known = known || section == f.section;
      if (!known)
        throw fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw fail("expected key = value");
    const auto key = trim(std::string_view(body).substr(0, eq));
    const auto value = trim(std::string_view(body).substr(eq + 1));
    if (section.empty())
      throw fail("key '" + key + "' outside of a section");
    const auto *f = find_field(section, key);
    if (!f)
      throw fail("unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert({section, key}).second)
      throw fail("duplicate key '" + key + "' in [" + section + "]");
    try {
      f->set(cfg, value);
    } catch (const ConfigError &e) {
      throw fail(section + "." + key + ": " + e.what());
    }
  }
  try {
    validate(cfg);
  } catch (const UsageError &e) {
    throw ConfigError(origin + ": invalid configuration: " + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

/// Canonical text form; parse_config(dump_config(c)) == c.
inline std::string dump_config(const ExperimentConfig &c, bool include_out_dir = true) {
  std::string out;
  std::string section;
  for (const auto &f : config_detail::fields()) {
    if (!include_out_dir && std::string_view(f.key) == "out_dir")
      continue;
    if (section != f.section) {
      section = f.section;
      out += (out.empty() ? "[" : "\n[") + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(c) + "\n";
  }
  return out;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw InternalError("sha256 digest failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Hash of every field that affects results (the output directory does not).
inline std::string config_hash(const ExperimentConfig &c) {
  return sha256_hex(dump_config(c, false));
}

} // namespace fedasmu
