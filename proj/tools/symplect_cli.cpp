#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "symplect/experiment.hpp"
#include "symplect/io.hpp"
#include "symplect/report.hpp"

using namespace symplect;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string system = "mass_spring";
  std::optional<std::string> family;
  std::optional<std::string> graph;
  std::optional<std::string> integrator;
  std::optional<int> depth;
  std::optional<std::string> noise;
  std::optional<double> sigma;
  std::optional<int> epochs;
  std::optional<int> width;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<int> n_ics;
  std::optional<int> n_bodies;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int jobs = 1;
  std::string grid = "single";
  std::string results;
};

bool yes_no(const std::string& flag, const std::string& v, const char* yes, const char* no) {
  if (v == yes) return true;
  if (v == no) return false;
  throw ConfigError("--" + flag + " expects " + yes + "|" + no + ", got '" + v + "'");
}

experiment::ExperimentConfig build_config(const Flags& f) {
  experiment::ExperimentConfig c;
  if (!f.config.empty()) {
    c = experiment::parse(report::read_text(f.config));
  } else {
    const auto kind = system_from_string(f.system);
    c = experiment::default_config(kind, f.n_bodies.value_or(5));
    if (const char* env = std::getenv("SYMPLECT_OUT"); env != nullptr && *env != '\0') c.out_dir = env;
  }
  if (f.n_bodies && c.system == SystemKind::n_body_spring) c.n_bodies = *f.n_bodies;
  if (f.family) c.family = models::family_from_string(*f.family);
  if (f.graph) c.graph = yes_no("graph", *f.graph, "yes", "no");
  if (f.integrator) c.integrator = integrator_from_string(*f.integrator);
  if (f.depth) c.depth = *f.depth;
  if (f.noise) c.noise = yes_no("noise", *f.noise, "on", "off");
  if (f.sigma) c.sigma = *f.sigma;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.width) c.hidden_width = *f.width;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.lr) c.lr = *f.lr;
  if (f.n_ics) c.n_ics = *f.n_ics;
  if (f.seed) c.data_seed = c.init_seed = c.eval_seed = *f.seed;
  if (f.out) c.out_dir = *f.out;
  experiment::validate(c);
  return c;
}

std::string cell_name(const experiment::ExperimentConfig& c) {
  return std::string(to_string(c.system)) + "_" + models::model_name(c.family, c.graph) + "_" + to_string(c.integrator) +
         "_d" + std::to_string(c.depth) + "_noise_" + (c.noise ? "on" : "off") + "_seed" + std::to_string(c.data_seed);
}

nlohmann::json metrics_json(const experiment::CellResult& r) {
  nlohmann::json j;
  j["geo_state"] = r.metrics.geo_state;
  j["geo_energy"] = r.metrics.geo_energy;
  j["se_log_state"] = r.metrics.se_log_state;
  j["se_log_energy"] = r.metrics.se_log_energy;
  j["diverged"] = r.metrics.diverged_count;
  j["n_ics"] = r.metrics.n_ics;
  j["steps"] = r.metrics.steps;
  j["per_ic_state_mse"] = r.metrics.per_ic_state_mse;
  j["per_ic_energy_mse"] = r.metrics.per_ic_energy_mse;
  if (std::isfinite(r.metrics.geo_learned_energy)) j["geo_learned_energy"] = r.metrics.geo_learned_energy;
  j["oracle_geo_state"] = r.oracle_geo_state;
  j["oracle_geo_energy"] = r.oracle_geo_energy;
  j["warnings"] = r.warnings;
  return j;
}

int cmd_gen(const Flags& f) {
  const auto c = build_config(f);
  const auto d = experiment::make_dataset(c);
  const fs::path dir = fs::path(c.out_dir) / ("data_" + std::string(to_string(c.system)) + "_noise_" +
                                              (c.noise ? "on" : "off") + "_seed" + std::to_string(c.data_seed));
  for (const auto& p : io::write_dataset(d, dir)) std::cout << p.string() << "\n";
  std::cout << "noise-to-signal " << d.noise_to_signal() << "\n";
  return 0;
}

int cmd_train(const Flags& f, bool evaluate) {
  const auto c = build_config(f);
  const fs::path dir = fs::path(c.out_dir) / cell_name(c);
  fs::create_directories(dir);
  report::write_text(dir / "cell.cfg", experiment::serialize(c));
  if (evaluate && fs::exists(dir / "model.model.json")) {
    // Reuse the trained checkpoint of this cell.
    const auto model = models::load_model(dir / "model");
    experiment::CellResult r;
    r.config = c;
    r.metrics = evaluation::evaluate_model(model, c.integrator, experiment::system_of(c), c.n_ics, c.horizon_mult, c.h,
                                           c.t_max, c.eval_seed);
    report::write_text(dir / "metrics.json", metrics_json(r).dump(2) + "\n");
    std::cout << "geo_state " << r.metrics.geo_state << " geo_energy " << r.metrics.geo_energy << "\n";
    return 0;
  }
  const auto r = experiment::run_cell(c);
  if (!r.ok()) {
    std::cerr << "error: " << r.error << "\n";
    return 2;
  }
  models::save_model(dir / "model", *r.model);
  report::write_text(dir / "train_log.csv", io::training_log_csv(r.log));
  report::write_text(dir / "metrics.json", metrics_json(r).dump(2) + "\n");
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << dir.string() << "\n";
  std::cout << "geo_state " << r.metrics.geo_state << " geo_energy " << r.metrics.geo_energy << " train_s "
            << r.train_wall_s << "\n";
  return 0;
}

int cmd_ablate(const Flags& f) {
  const auto base = build_config(f);
  std::vector<experiment::ExperimentConfig> grid;
  if (f.grid == "full") {
    grid = experiment::full_grid(base);
  } else if (f.grid == "single") {
    grid = {base};
  } else {
    throw ConfigError("unknown grid '" + f.grid + "' (expected full|single)");
  }
  if (f.jobs < 1) throw ConfigError("--jobs must be >= 1");
  const auto results = experiment::run_ablation(grid, f.jobs);
  std::vector<report::ResultRow> rows;
  int failed = 0;
  for (const auto& r : results) {
    rows.push_back(report::row_of(r));
    if (!r.ok()) ++failed;
    for (const auto& w : r.warnings) std::cerr << "warning: " << cell_name(r.config) << ": " << w << "\n";
  }
  const fs::path dir = fs::path(base.out_dir) / ("ablate_" + std::string(to_string(base.system)));
  for (const auto& p : report::write_report(rows, dir)) std::cout << p.string() << "\n";
  std::cout << rows.size() << " cells, " << failed << " failed\n";
  return 0;
}

int cmd_report(const Flags& f) {
  if (f.results.empty()) throw ConfigError("report needs --results <results.csv>");
  const auto rows = report::from_csv(report::read_text(f.results));
  fs::path dir;
  if (f.out) {
    dir = *f.out;
  } else if (const char* env = std::getenv("SYMPLECT_OUT"); env != nullptr && *env != '\0') {
    dir = fs::path(env) / "report";
  } else {
    dir = "out/report";
  }
  for (const auto& p : report::write_report(rows, dir)) std::cout << p.string() << "\n";
  return 0;
}

void add_cell_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "experiment config file");
  app->add_option("--system", f.system,
                  "mass_spring|pendulum|two_body_grav|three_body_grav|n_body_spring|henon_heiles");
  app->add_option("--family", f.family, "baseline|hamiltonian|potential");
  app->add_option("--graph", f.graph, "yes|no");
  app->add_option("--integrator", f.integrator, "rk1..rk4, vi1, vi2, vi3, vi4_yoshida, vi4_mcate");
  app->add_option("--depth", f.depth, "rollout depth 1|2|5|10");
  app->add_option("--noise", f.noise, "on|off");
  app->add_option("--sigma", f.sigma, "noise scale");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--width", f.width, "hidden width");
  app->add_option("--batch-size", f.batch_size, "minibatch size");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--n-ics", f.n_ics, "test initial conditions");
  app->add_option("--n-bodies", f.n_bodies, "bodies of the n_body_spring system");
  app->add_option("--seed", f.seed, "data, init and eval seed");
  app->add_option("--out", f.out, "output root (default $SYMPLECT_OUT or ./out)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"symplect: learned energy-conserving dynamics"};
  app.require_subcommand(1);
  Flags f;
  auto* gen = app.add_subcommand("gen", "generate a dataset");
  auto* train = app.add_subcommand("train", "train and evaluate one cell");
  auto* eval = app.add_subcommand("eval", "evaluate one cell (trains it first if needed)");
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
  auto* rep = app.add_subcommand("report", "render CSV and SVG report from a results table");
  for (auto* sub : {gen, train, eval, ablate}) add_cell_flags(sub, f);
  ablate->add_option("--jobs", f.jobs, "worker threads");
  ablate->add_option("--grid", f.grid, "full|single");
  rep->add_option("--results", f.results, "results CSV")->required();
  rep->add_option("--out", f.out, "report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (gen->parsed()) return cmd_gen(f);
    if (train->parsed()) return cmd_train(f, false);
    if (eval->parsed()) return cmd_train(f, true);
    if (ablate->parsed()) return cmd_ablate(f);
    if (rep->parsed()) return cmd_report(f);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
