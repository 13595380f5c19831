#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "symplect/errors.hpp"
#include "symplect/integrators.hpp"
#include "symplect/report.hpp"
#include "symplect/training.hpp"

namespace symplect::io {

using report::csv_double;
using report::read_text;
using report::write_text;

/// traj_id, step_index, t, q_0.., p_0.. with 17 significant digits.
inline std::string trajectories_csv(const std::vector<Trajectory>& trs) {
  std::ostringstream o;
  const auto n = trs.empty() ? 0 : trs.front().states.front().q.size();
  o << "traj_id,step_index,t";
  for (Eigen::Index i = 0; i < n; ++i) o << ",q_" << i;
  for (Eigen::Index i = 0; i < n; ++i) o << ",p_" << i;
  o << "\n";
  for (std::size_t id = 0; id < trs.size(); ++id) {
    for (std::size_t k = 0; k < trs[id].size(); ++k) {
      const auto& s = trs[id].states[k];
      o << id << ',' << k << ',' << csv_double(trs[id].t[k]);
      for (Eigen::Index i = 0; i < n; ++i) o << ',' << csv_double(s.q(i));
      for (Eigen::Index i = 0; i < n; ++i) o << ',' << csv_double(s.p(i));
      o << "\n";
    }
  }
  return o.str();
}

/// Inverse of trajectories_csv; body counts and kinds come from `spec`.
inline std::vector<Trajectory> parse_trajectories_csv(const std::string& text, const SystemSpec& spec, double h) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty trajectory file");
  const int n = spec.size();
  std::map<long, Trajectory> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        f.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("line " + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (static_cast<int>(f.size()) != 3 + 2 * n) throw IoError("line " + std::to_string(lineno) + ": wrong field count");
    auto& tr = out[static_cast<long>(f[0])];
    if (static_cast<double>(tr.size()) != f[1]) throw IoError("line " + std::to_string(lineno) + ": steps out of order");
    tr.h = h;
    tr.system = spec.kind;
    tr.t.push_back(f[2]);
    Vector q(n);
    Vector p(n);
    for (int i = 0; i < n; ++i) {
      q(i) = f[static_cast<std::size_t>(3 + i)];
      p(i) = f[static_cast<std::size_t>(3 + n + i)];
    }
    tr.states.push_back(make_state(q, p, spec.n_bodies, spec.dim));
  }
  std::vector<Trajectory> v;
  for (auto& [id, tr] : out) v.push_back(std::move(tr));
  return v;
}

/// manifest.json, clean.csv, noisy.csv and noise.csv under dir.
inline std::vector<std::filesystem::path> write_dataset(const training::Dataset& d, const std::filesystem::path& dir) {
  auto manifest = d.manifest();
  manifest["files"] = {{"clean", "clean.csv"}, {"noisy", "noisy.csv"}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text(dir / "clean.csv", trajectories_csv(d.clean));
  write_text(dir / "noisy.csv", trajectories_csv(d.noisy));
  return {dir / "manifest.json", dir / "clean.csv", dir / "noisy.csv"};
}

struct LoadedDataset {
  nlohmann::json manifest;
  SystemSpec system;
  std::vector<Trajectory> clean;
  std::vector<Trajectory> noisy;
};

inline LoadedDataset read_dataset(const std::filesystem::path& dir) {
  LoadedDataset d;
  try {
    d.manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
    d.system = models::system_from_json(d.manifest.at("system"));
    const double h = d.manifest.at("h").get<double>();
    d.clean = parse_trajectories_csv(read_text(dir / "clean.csv"), d.system, h);
    d.noisy = parse_trajectories_csv(read_text(dir / "noisy.csv"), d.system, h);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("dataset manifest: ") + e.what());
  }
  for (auto& tr : d.noisy) tr.noisy = d.manifest.value("sigma", 0.0) > 0;
  return d;
}

/// epoch, loss, grad_norm, wall_ms
inline std::string training_log_csv(const std::vector<training::LogRow>& log) {
  std::ostringstream o;
  o << "epoch,loss,grad_norm,wall_ms\n";
  for (const auto& r : log) {
    o << r.epoch << ',' << csv_double(r.loss) << ',' << csv_double(r.grad_norm) << ',' << csv_double(r.wall_ms) << "\n";
  }
  return o.str();
}

}  // namespace symplect::io
