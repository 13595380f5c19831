#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "symplect/errors.hpp"
#include "symplect/experiment.hpp"

namespace symplect::report {

/// One results-table row, everything the report needs and nothing more.
struct ResultRow {
  std::string system;
  std::string family;
  bool graph = false;
  std::string integrator;
  int depth = 0;
  bool noise = false;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double geo_state = 0.0;
  double geo_energy = 0.0;
  double se_log_state = 0.0;
  double se_log_energy = 0.0;
  int diverged = 0;
  double train_wall_s = 0.0;
  double geo_learned_energy = 0.0;
  std::string status = "ok";

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline const char* kCsvHeader =
    "system,family,graph,integrator,depth,noise,sigma,seed,geo_state,geo_energy,se_log_state,se_log_energy,"
    "diverged,train_wall_s,geo_learned_energy,status";

inline ResultRow row_of(const experiment::CellResult& r) {
  const auto& c = r.config;
  ResultRow row;
  row.system = to_string(c.system);
  row.family = models::to_string(c.family);
  row.graph = c.graph;
  row.integrator = to_string(c.integrator);
  row.depth = c.depth;
  row.noise = c.noise;
  row.sigma = c.sigma;
  row.seed = c.data_seed;
  row.train_wall_s = r.train_wall_s;
  if (!r.ok()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.geo_state = row.geo_energy = row.se_log_state = row.se_log_energy = row.geo_learned_energy = nan;
    std::string msg = r.error;
    std::replace_if(msg.begin(), msg.end(), [](char ch) { return ch == ',' || ch == '\n' || ch == '\r' || ch == '"'; },
                    ';');
    row.status = "error: " + msg;
    return row;
  }
  row.geo_state = r.metrics.geo_state;
  row.geo_energy = r.metrics.geo_energy;
  row.se_log_state = r.metrics.se_log_state;
  row.se_log_energy = r.metrics.se_log_energy;
  row.diverged = r.metrics.diverged_count;
  row.geo_learned_energy = r.metrics.geo_learned_energy;
  return row;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  o << kCsvHeader << "\n";
  for (const auto& r : rows) {
    o << r.system << ',' << r.family << ',' << (r.graph ? "yes" : "no") << ',' << r.integrator << ',' << r.depth << ','
      << (r.noise ? "on" : "off") << ',' << csv_double(r.sigma) << ',' << r.seed << ',' << csv_double(r.geo_state)
      << ',' << csv_double(r.geo_energy) << ',' << csv_double(r.se_log_state) << ',' << csv_double(r.se_log_energy)
      << ',' << r.diverged << ',' << csv_double(r.train_wall_s) << ',' << csv_double(r.geo_learned_energy) << ','
      << r.status << "\n";
  }
  return o.str();
}

inline std::vector<ResultRow> from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw IoError("results CSV has an unexpected header");
  auto num = [](const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw IoError("bad number '" + s + "' in results CSV");
    return x;
  };
  std::vector<ResultRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 16) throw IoError("results CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    ResultRow r;
    r.system = f[0];
    r.family = f[1];
    r.graph = f[2] == "yes";
    r.integrator = f[3];
    r.depth = static_cast<int>(num(f[4]));
    r.noise = f[5] == "on";
    r.sigma = num(f[6]);
    r.seed = std::stoull(f[7]);
    r.geo_state = num(f[8]);
    r.geo_energy = num(f[9]);
    r.se_log_state = num(f[10]);
    r.se_log_energy = num(f[11]);
    r.diverged = static_cast<int>(num(f[12]));
    r.train_wall_s = num(f[13]);
    r.geo_learned_energy = num(f[14]);
    r.status = f[15];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream o;
  o << in.rdbuf();
  return o.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline const std::vector<std::string>& palette() {
  static const std::vector<std::string> p = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                             "#edc948", "#b07aa1", "#ff9da7", "#9c755f"};
  return p;
}

inline int integrator_rank(const std::string& name) {
  for (std::size_t i = 0; i < kAllIntegrators.size(); ++i) {
    if (name == to_string(kAllIntegrators[i])) return static_cast<int>(i);
  }
  return static_cast<int>(kAllIntegrators.size());
}

inline int model_rank(const std::string& name) {
  static const std::vector<std::string> order = {"Baseline", "OGN", "HNN", "HOGN", "PNN", "PGN"};
  const auto it = std::find(order.begin(), order.end(), name);
  return static_cast<int>(it - order.begin());
}

inline std::string model_label(const ResultRow& r) {
  return models::model_name(models::family_from_string(r.family), r.graph);
}

struct Bar {
  std::string group;
  std::string series;
  double value;
  double se;
};

/// One log-scale grouped-bar panel with +-1 standard-error whiskers
/// (exp(log v +- se)). Returns SVG elements translated to (x0, y0).
inline std::string panel(const std::string& title, const std::vector<Bar>& bars, const std::vector<std::string>& groups,
                         const std::vector<std::string>& series, double x0, double y0, double w, double h) {
  std::ostringstream o;
  const double left = 70;
  const double top = 30;
  const double plot_w = w - left - 20;
  const double plot_h = h - top - 50;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& b : bars) {
    if (!(b.value > 0) || !std::isfinite(b.value)) continue;
    lo = std::min(lo, std::log10(b.value) - b.se / std::log(10.0));
    hi = std::max(hi, std::log10(b.value) + b.se / std::log(10.0));
  }
  if (!std::isfinite(lo)) {
    lo = -1;
    hi = 0;
  }
  int dlo = static_cast<int>(std::floor(lo));
  int dhi = static_cast<int>(std::ceil(hi));
  if (dhi <= dlo) dhi = dlo + 1;
  auto ypos = [&](double log10v) { return top + plot_h * (1.0 - (log10v - dlo) / (dhi - dlo)); };

  o << "<g transform=\"translate(" << fmt(x0) << "," << fmt(y0) << ")\">\n";
  o << "<text x=\"" << fmt(w / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
  for (int d = dlo; d <= dhi; ++d) {
    const double y = ypos(d);
    o << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(left + plot_w) << "\" y2=\"" << fmt(y)
      << "\" stroke=\"#dddddd\"/>\n";
    o << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\" font-size=\"11\">1e" << d
      << "</text>\n";
  }
  o << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(left) << "\" y2=\""
    << fmt(top + plot_h) << "\" stroke=\"#000000\"/>\n";

  const double gw = plot_w / static_cast<double>(groups.size());
  const double bw = gw * 0.8 / static_cast<double>(series.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = left + gw * static_cast<double>(g);
    o << "<text x=\"" << fmt(gx + gw / 2) << "\" y=\"" << fmt(top + plot_h + 16)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << esc(groups[g]) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      const auto it = std::find_if(bars.begin(), bars.end(),
                                   [&](const Bar& b) { return b.group == groups[g] && b.series == series[s]; });
      if (it == bars.end()) continue;
      const double x = gx + gw * 0.1 + bw * static_cast<double>(s);
      const std::string& color = palette()[s % palette().size()];
      if (!(it->value > 0) || !std::isfinite(it->value)) {
        o << "<text x=\"" << fmt(x + bw / 2) << "\" y=\"" << fmt(top + plot_h - 4)
          << "\" text-anchor=\"middle\" font-size=\"10\">n/a</text>\n";
        continue;
      }
      const double lv = std::log10(it->value);
      const double y = ypos(lv);
      o << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(bw) << "\" height=\""
        << fmt(top + plot_h - y) << "\" fill=\"" << color << "\"><title>" << esc(groups[g] + " " + series[s])
        << "</title></rect>\n";
      const double e = it->se / std::log(10.0);
      const double cx = x + bw / 2;
      o << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(ypos(lv + e)) << "\" x2=\"" << fmt(cx) << "\" y2=\""
        << fmt(ypos(lv - e)) << "\" stroke=\"#000000\"/>\n";
    }
  }
  o << "</g>\n";
  return o.str();
}

}  // namespace detail

/// Two-panel (state, energy) chart for rows that share system, depth and noise.
inline std::string render_svg(const std::string& title, const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ContractError("no rows to plot");
  std::set<std::pair<int, std::string>> gset;
  std::set<std::pair<int, std::string>> sset;
  std::vector<detail::Bar> state;
  std::vector<detail::Bar> energy;
  for (const auto& r : rows) {
    const std::string g = detail::model_label(r);
    gset.insert({detail::model_rank(g), g});
    sset.insert({detail::integrator_rank(r.integrator), r.integrator});
    state.push_back({g, r.integrator, r.geo_state, r.se_log_state});
    energy.push_back({g, r.integrator, r.geo_energy, r.se_log_energy});
  }
  std::vector<std::string> groups;
  for (const auto& [rank, name] : gset) groups.push_back(name);
  std::vector<std::string> series;
  for (const auto& [rank, name] : sset) series.push_back(name);

  const double w = std::max(480.0, 120.0 + 70.0 * static_cast<double>(groups.size() * series.size()) / 2.0);
  const double ph = 300;
  const double legend_h = 30;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(w) << "\" height=\""
    << detail::fmt(2 * ph + legend_h + 30) << "\" font-family=\"sans-serif\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  o << "<text x=\"" << detail::fmt(w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"16\">"
    << detail::esc(title) << "</text>\n";
  o << detail::panel("state MSE (geometric mean)", state, groups, series, 0, 30, w, ph);
  o << detail::panel("energy MSE (geometric mean)", energy, groups, series, 0, 30 + ph, w, ph);
  double lx = 70;
  const double ly = 30 + 2 * ph + 10;
  for (std::size_t s = 0; s < series.size(); ++s) {
    o << "<rect x=\"" << detail::fmt(lx) << "\" y=\"" << detail::fmt(ly) << "\" width=\"12\" height=\"12\" fill=\""
      << detail::palette()[s % detail::palette().size()] << "\"/>\n";
    o << "<text x=\"" << detail::fmt(lx + 16) << "\" y=\"" << detail::fmt(ly + 11) << "\" font-size=\"11\">"
      << detail::esc(series[s]) << "</text>\n";
    lx += 100;
  }
  o << "</svg>\n";
  return o.str();
}

/// Writes results.csv and one SVG per (system, depth, noise); returns the
/// written paths in a deterministic order.
inline std::vector<std::filesystem::path> write_report(const std::vector<ResultRow>& rows,
                                                       const std::filesystem::path& dir) {
  if (rows.empty()) throw ContractError("results table is empty");
  std::vector<std::filesystem::path> written;
  write_text(dir / "results.csv", to_csv(rows));
  written.push_back(dir / "results.csv");
  std::map<std::tuple<std::string, int, bool>, std::vector<ResultRow>> panels;
  for (const auto& r : rows) panels[{r.system, r.depth, r.noise}].push_back(r);
  for (const auto& [key, group] : panels) {
    const auto& [system, depth, noise] = key;
    const std::string stem = system + "_depth" + std::to_string(depth) + "_noise_" + (noise ? "on" : "off");
    const std::string title =
        system + ", " + std::to_string(depth) + "-step integration, " + (noise ? "noisy" : "noise-free");
    write_text(dir / (stem + ".svg"), render_svg(title, group));
    written.push_back(dir / (stem + ".svg"));
  }
  return written;
}

}  // namespace symplect::report
