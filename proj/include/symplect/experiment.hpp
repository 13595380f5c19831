#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "symplect/errors.hpp"
#include "symplect/evaluation.hpp"
#include "symplect/models.hpp"
#include "symplect/training.hpp"

namespace symplect::experiment {

using models::Family;
using training::LossKind;
using training::SigmaMode;

inline constexpr std::array<int, 4> kDepths = {1, 2, 5, 10};
inline constexpr std::array<int, 3> kSweepDepths = {1, 5, 10};

/// One ablation cell plus everything needed to rerun it.
struct ExperimentConfig {
  SystemKind system = SystemKind::mass_spring;
  int n_bodies = 1;
  std::uint64_t system_seed = 0;

  bool noise = true;
  double sigma = 0.1;
  int trajectories = 25;
  int samples = 30;
  double h = 0.1;
  double t_max = 3.0;
  std::uint64_t data_seed = 0;

  Family family = Family::potential;
  bool graph = false;
  int hidden_layers = 2;
  int hidden_width = 200;
  diffnet::Activation activation = diffnet::Activation::softplus;
  int message_dim = 32;
  int embed_dim = 32;
  std::uint64_t init_seed = 0;

  IntegratorId integrator = IntegratorId::vi4_yoshida;
  int depth = 10;
  int epochs = 100;
  int batch_size = 100;
  double lr = 1e-3;
  LossKind loss = LossKind::mse;
  SigmaMode sigma_mode = SigmaMode::fixed;

  int n_ics = evaluation::kDefaultIcs;
  double horizon_mult = evaluation::kDefaultHorizonMult;
  std::uint64_t eval_seed = 0;

  std::string out_dir = "out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Table defaults for a system.
inline ExperimentConfig default_config(SystemKind kind, int n_spring_bodies = 5) {
  ExperimentConfig c;
  const auto d = training::table_defaults(kind);
  c.system = kind;
  c.n_bodies = make_system(kind, 0, n_spring_bodies).n_bodies;
  c.trajectories = d.counts.trajectories;
  c.samples = d.counts.samples;
  c.h = d.counts.h;
  c.t_max = d.counts.t_max;
  c.hidden_layers = d.hidden_layers;
  c.hidden_width = d.hidden_width;
  return c;
}

inline SystemSpec system_of(const ExperimentConfig& c) {
  return make_system(c.system, c.system_seed, c.system == SystemKind::n_body_spring ? c.n_bodies : 5);
}

inline training::DataCounts counts_of(const ExperimentConfig& c) {
  return {c.trajectories, c.samples, c.h, c.t_max};
}

inline models::ModelConfig model_config_of(const ExperimentConfig& c) {
  models::ModelConfig m;
  m.family = c.family;
  m.use_graph = c.graph;
  m.hidden_layers = c.hidden_layers;
  m.hidden_width = c.hidden_width;
  m.activation = c.activation;
  m.message_dim = c.message_dim;
  m.embed_dim = c.embed_dim;
  m.seed = c.init_seed;
  return m;
}

inline training::TrainConfig train_config_of(const ExperimentConfig& c) {
  training::TrainConfig t;
  t.depth = c.depth;
  t.epochs = c.epochs;
  t.batch_size = c.batch_size;
  t.lr = c.lr;
  t.loss = c.loss;
  t.sigma_mode = c.sigma_mode;
  t.sigma = c.sigma;
  t.seed = c.init_seed;
  return t;
}

inline void validate(const ExperimentConfig& c) {
  if (std::find(kDepths.begin(), kDepths.end(), c.depth) == kDepths.end()) {
    throw ConfigError("unknown depth " + std::to_string(c.depth) + " (expected 1|2|5|10)");
  }
  if (c.system == SystemKind::n_body_spring && c.n_bodies < 2) throw ConfigError("n_body_spring needs n_bodies >= 2");
  if (c.system != SystemKind::n_body_spring && c.n_bodies != make_system(c.system).n_bodies) {
    throw ConfigError(std::string("n_bodies is fixed for ") + to_string(c.system));
  }
  if (c.trajectories < 1) throw ConfigError("trajectories must be >= 1");
  if (c.samples < c.depth + 1) throw ConfigError("samples must exceed the rollout depth");
  if (!(c.h > 0) || !(c.t_max > 0)) throw ConfigError("h and t_max must be positive");
  if (c.depth * c.h > c.t_max + 1e-12) throw ConfigError("rollout depth * h exceeds t_max");
  if (!(c.sigma > 0)) throw ConfigError("sigma must be positive");
  if (c.hidden_width < 1 || c.hidden_layers < 0) throw ConfigError("bad network shape");
  if (c.message_dim < 1 || c.embed_dim < 1) throw ConfigError("bad graph dimensions");
  if (c.epochs < 0 || c.batch_size < 1 || !(c.lr > 0)) throw ConfigError("bad training hyperparameters");
  if (c.n_ics < 1 || !(c.horizon_mult > 0)) throw ConfigError("bad evaluation protocol");
  if (c.out_dir.empty()) throw ConfigError("output directory is empty");
}

// ---------------------------------------------------------------------------
// Config file: key = value lines under [section] headers

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string serialize(const ExperimentConfig& c) {
  std::ostringstream o;
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  o << "[system]\n"
    << "name = " << to_string(c.system) << "\n"
    << "n_bodies = " << c.n_bodies << "\n"
    << "system_seed = " << c.system_seed << "\n\n"
    << "[data]\n"
    << "noise = " << (c.noise ? "on" : "off") << "\n"
    << "sigma = " << format_double(c.sigma) << "\n"
    << "trajectories = " << c.trajectories << "\n"
    << "samples = " << c.samples << "\n"
    << "h = " << format_double(c.h) << "\n"
    << "t_max = " << format_double(c.t_max) << "\n"
    << "data_seed = " << c.data_seed << "\n\n"
    << "[model]\n"
    << "family = " << models::to_string(c.family) << "\n"
    << "graph = " << yn(c.graph) << "\n"
    << "hidden_layers = " << c.hidden_layers << "\n"
    << "hidden_width = " << c.hidden_width << "\n"
    << "activation = " << diffnet::to_string(c.activation) << "\n"
    << "message_dim = " << c.message_dim << "\n"
    << "embed_dim = " << c.embed_dim << "\n"
    << "init_seed = " << c.init_seed << "\n\n"
    << "[train]\n"
    << "integrator = " << to_string(c.integrator) << "\n"
    << "depth = " << c.depth << "\n"
    << "epochs = " << c.epochs << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "lr = " << format_double(c.lr) << "\n"
    << "loss = " << training::to_string(c.loss) << "\n"
    << "sigma_mode = " << training::to_string(c.sigma_mode) << "\n\n"
    << "[eval]\n"
    << "n_ics = " << c.n_ics << "\n"
    << "horizon_mult = " << format_double(c.horizon_mult) << "\n"
    << "eval_seed = " << c.eval_seed << "\n\n"
    << "[output]\n"
    << "dir = " << c.out_dir << "\n";
  return o.str();
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v.front() == '-') {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return x;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return x;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "yes" || v == "on" || v == "true") return true;
  if (v == "no" || v == "off" || v == "false") return false;
  throw ConfigError("'" + key + "' expects yes|no, got '" + v + "'");
}

}  // namespace detail

/// Inverse of serialize. Keys missing from the text keep the table defaults
/// of the named system; unknown sections or keys are errors.
inline ExperimentConfig parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = section + "." + detail::trim(t.substr(0, eq));
    if (kv.count(key) != 0) throw ConfigError("duplicate key '" + key + "'");
    kv[key] = detail::trim(t.substr(eq + 1));
  }

  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };

  const auto name = take("system.name");
  if (!name) throw ConfigError("missing [system] name");
  ExperimentConfig c = default_config(system_from_string(*name));
  if (auto v = take("system.n_bodies")) c.n_bodies = static_cast<int>(detail::parse_int("n_bodies", *v));
  if (auto v = take("system.system_seed")) c.system_seed = detail::parse_seed("system_seed", *v);
  if (auto v = take("data.noise")) c.noise = detail::parse_flag("noise", *v);
  if (auto v = take("data.sigma")) c.sigma = detail::parse_double("sigma", *v);
  if (auto v = take("data.trajectories")) c.trajectories = static_cast<int>(detail::parse_int("trajectories", *v));
  if (auto v = take("data.samples")) c.samples = static_cast<int>(detail::parse_int("samples", *v));
  if (auto v = take("data.h")) c.h = detail::parse_double("h", *v);
  if (auto v = take("data.t_max")) c.t_max = detail::parse_double("t_max", *v);
  if (auto v = take("data.data_seed")) c.data_seed = detail::parse_seed("data_seed", *v);
  if (auto v = take("model.family")) c.family = models::family_from_string(*v);
  if (auto v = take("model.graph")) c.graph = detail::parse_flag("graph", *v);
  if (auto v = take("model.hidden_layers")) c.hidden_layers = static_cast<int>(detail::parse_int("hidden_layers", *v));
  if (auto v = take("model.hidden_width")) c.hidden_width = static_cast<int>(detail::parse_int("hidden_width", *v));
  if (auto v = take("model.activation")) c.activation = diffnet::activation_from_string(*v);
  if (auto v = take("model.message_dim")) c.message_dim = static_cast<int>(detail::parse_int("message_dim", *v));
  if (auto v = take("model.embed_dim")) c.embed_dim = static_cast<int>(detail::parse_int("embed_dim", *v));
  if (auto v = take("model.init_seed")) c.init_seed = detail::parse_seed("init_seed", *v);
  if (auto v = take("train.integrator")) c.integrator = integrator_from_string(*v);
  if (auto v = take("train.depth")) c.depth = static_cast<int>(detail::parse_int("depth", *v));
  if (auto v = take("train.epochs")) c.epochs = static_cast<int>(detail::parse_int("epochs", *v));
  if (auto v = take("train.batch_size")) c.batch_size = static_cast<int>(detail::parse_int("batch_size", *v));
  if (auto v = take("train.lr")) c.lr = detail::parse_double("lr", *v);
  if (auto v = take("train.loss")) c.loss = training::loss_kind_from_string(*v);
  if (auto v = take("train.sigma_mode")) c.sigma_mode = training::sigma_mode_from_string(*v);
  if (auto v = take("eval.n_ics")) c.n_ics = static_cast<int>(detail::parse_int("n_ics", *v));
  if (auto v = take("eval.horizon_mult")) c.horizon_mult = detail::parse_double("horizon_mult", *v);
  if (auto v = take("eval.eval_seed")) c.eval_seed = detail::parse_seed("eval_seed", *v);
  if (auto v = take("output.dir")) c.out_dir = *v;
  if (!kv.empty()) throw ConfigError("unknown config key '" + kv.begin()->first + "'");
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Running cells

struct CellResult {
  ExperimentConfig config;
  std::optional<models::ModelSpec> model;
  std::vector<training::LogRow> log;
  evaluation::Metrics metrics;
  double oracle_geo_state = std::numeric_limits<double>::quiet_NaN();
  double oracle_geo_energy = std::numeric_limits<double>::quiet_NaN();
  double train_wall_s = 0.0;
  std::vector<std::string> warnings;
  std::string error;  // empty on success

  [[nodiscard]] bool ok() const { return error.empty(); }
};

inline training::Dataset make_dataset(const ExperimentConfig& c) {
  return training::generate_dataset(system_of(c), counts_of(c), c.noise ? c.sigma : 0.0, c.data_seed);
}

/// Train and evaluate one cell. Failures are returned in `error`, not thrown,
/// unless the config itself is invalid.
inline CellResult run_cell(const ExperimentConfig& c, const training::Dataset* shared = nullptr) {
  validate(c);
  CellResult r;
  r.config = c;
  try {
    const SystemSpec spec = system_of(c);
    std::optional<training::Dataset> own;
    if (shared == nullptr) own = make_dataset(c);
    const training::Dataset& data = shared != nullptr ? *shared : *own;
    const auto windows = training::make_windows(data.noisy, c.depth, data.train_indices);
    const auto initial = models::build_model(model_config_of(c), spec);
    auto trained = training::train(initial, c.integrator, windows, c.h, train_config_of(c));
    r.train_wall_s = trained.wall_s;
    r.log = std::move(trained.log);
    if (trained.diverged_batches > 0) {
      r.warnings.push_back(std::to_string(trained.diverged_batches) + " training batches diverged and were skipped");
    }
    r.model = std::move(trained.model);
    r.metrics = evaluation::evaluate_model(*r.model, c.integrator, spec, c.n_ics, c.horizon_mult, c.h, c.t_max,
                                           c.eval_seed);
    const auto oracle = evaluation::evaluate_model(models::analytic_model(c.family, spec), c.integrator, spec, c.n_ics,
                                                   c.horizon_mult, c.h, c.t_max, c.eval_seed);
    r.oracle_geo_state = oracle.geo_state;
    r.oracle_geo_energy = oracle.geo_energy;
    if (r.metrics.geo_state < oracle.geo_state || r.metrics.geo_energy < oracle.geo_energy) {
      r.warnings.push_back("trained model beat the analytic oracle on the same integrator");
    }
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

/// Mass-spring style sweep: families x graph x integrators x depths x noise.
inline std::vector<ExperimentConfig> full_grid(const ExperimentConfig& base) {
  std::vector<ExperimentConfig> out;
  for (auto fam : models::kAllFamilies) {
    for (bool graph : {false, true}) {
      for (auto id : kSweepIntegrators) {
        for (int depth : kSweepDepths) {
          for (bool noise : {false, true}) {
            ExperimentConfig c = base;
            c.family = fam;
            c.graph = graph;
            c.integrator = id;
            c.depth = depth;
            c.noise = noise;
            out.push_back(c);
          }
        }
      }
    }
  }
  return out;
}

/// Runs every cell on `jobs` worker threads. Cells sharing data settings
/// share one read-only dataset. Row order follows the input order.
inline std::vector<CellResult> run_ablation(const std::vector<ExperimentConfig>& grid, int jobs = 1,
                                            bool keep_models = false) {
  for (const auto& c : grid) validate(c);
  using Key = std::tuple<int, int, std::uint64_t, bool, double, int, int, double, double, std::uint64_t>;
  auto key_of = [](const ExperimentConfig& c) {
    return Key{static_cast<int>(c.system), c.n_bodies, c.system_seed, c.noise, c.noise ? c.sigma : 0.0,
               c.trajectories, c.samples, c.h, c.t_max, c.data_seed};
  };
  std::map<Key, std::shared_ptr<const training::Dataset>> data;
  std::map<Key, std::string> data_errors;
  for (const auto& c : grid) {
    const Key k = key_of(c);
    if (data.count(k) != 0 || data_errors.count(k) != 0) continue;
    try {
      data[k] = std::make_shared<const training::Dataset>(make_dataset(c));
    } catch (const Error& e) {
      data_errors[k] = e.what();
    }
  }

  std::vector<CellResult> results(grid.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      const Key k = key_of(grid[i]);
      if (auto e = data_errors.find(k); e != data_errors.end()) {
        results[i].config = grid[i];
        results[i].error = "dataset: " + e->second;
        continue;
      }
      results[i] = run_cell(grid[i], data.at(k).get());
      if (!keep_models) results[i].model.reset();
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(grid.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace symplect::experiment
