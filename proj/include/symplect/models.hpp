#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "symplect/diffnet/net.hpp"
#include "symplect/errors.hpp"
#include "symplect/graphnet.hpp"
#include "symplect/integrators.hpp"
#include "symplect/systems.hpp"

namespace symplect::models {

using diffnet::NetParams;
using diffnet::NetView;
using diffnet::Tape;
using diffnet::Var;

enum class Family { baseline, hamiltonian, potential };

inline constexpr std::array<Family, 3> kAllFamilies = {Family::baseline, Family::hamiltonian, Family::potential};

inline const char* to_string(Family f) {
  switch (f) {
    case Family::baseline: return "baseline";
    case Family::hamiltonian: return "hamiltonian";
    case Family::potential: return "potential";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (auto f : kAllFamilies) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown family '" + s + "' (expected baseline|hamiltonian|potential)");
}

enum class Backbone { mlp, graph, analytic };

inline const char* to_string(Backbone b) {
  switch (b) {
    case Backbone::mlp: return "mlp";
    case Backbone::graph: return "graph";
    case Backbone::analytic: return "analytic";
  }
  return "?";
}

/// Conventional name of a (family, graph) cell.
inline std::string model_name(Family f, bool graph) {
  switch (f) {
    case Family::baseline: return graph ? "OGN" : "Baseline";
    case Family::hamiltonian: return graph ? "HOGN" : "HNN";
    case Family::potential: return graph ? "PGN" : "PNN";
  }
  return "?";
}

struct ModelSpec {
  Family family = Family::potential;
  Backbone backbone = Backbone::mlp;
  SystemSpec system;
  Vector mass_inverse;  // diagonal, one entry per coordinate
  Convention convention = Convention::canonical_qp;
  bool node_constants = false;  // graph nodes carry the system's per-body constants
  NetParams mlp;
  graph::GnParams gn;

  [[nodiscard]] bool use_graph() const { return backbone == Backbone::graph; }
  [[nodiscard]] int coords() const { return system.size(); }
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ModelConfig {
  Family family = Family::potential;
  bool use_graph = false;
  int hidden_layers = 2;
  int hidden_width = 200;
  diffnet::Activation activation = diffnet::Activation::softplus;
  int message_dim = 32;
  int embed_dim = 32;
  std::optional<bool> relative;        // default: on for multi-body spring/gravity systems
  std::optional<bool> node_constants;  // default: on when the system has per-body constants
  std::uint64_t seed = 0;
};

inline bool default_relative(const SystemSpec& s) {
  return s.n_bodies > 1 && (s.kind == SystemKind::n_body_spring || s.kind == SystemKind::two_body_grav ||
                            s.kind == SystemKind::three_body_grav);
}

// ---------------------------------------------------------------------------
// Construction

inline std::vector<NetParams*> param_blocks(ModelSpec& m) {
  if (m.backbone == Backbone::mlp) return {&m.mlp};
  if (m.backbone == Backbone::graph) return graph::blocks(m.gn);
  return {};
}

inline std::vector<const NetParams*> param_blocks(const ModelSpec& m) {
  if (m.backbone == Backbone::mlp) return {&m.mlp};
  if (m.backbone == Backbone::graph) return graph::blocks(m.gn);
  return {};
}

inline std::size_t parameter_count(const ModelSpec& m) {
  std::size_t n = 0;
  for (const auto* b : param_blocks(m)) n += b->parameter_count();
  return n;
}

namespace detail {

inline int graph_feature_dim(const ModelSpec& m) {
  const int d = m.system.dim;
  const int base = m.family == Family::potential ? d : 2 * d;
  return base + (m.node_constants ? static_cast<int>(node_constants(m.system).rows()) : 0);
}

}  // namespace detail

inline void validate(const ModelSpec& m) {
  validate(m.system);
  if (m.mass_inverse.size() != m.coords() || !(m.mass_inverse.array() > 0).all()) {
    throw ConfigError("mass_inverse must hold one positive entry per coordinate");
  }
  const int n = m.coords();
  if (m.backbone == Backbone::mlp) {
    diffnet::validate(m.mlp);
    const int in = m.family == Family::potential ? n : 2 * n;
    const int out = m.family == Family::baseline ? 2 * n : 1;
    if (m.mlp.input_dim() != in || m.mlp.output_dim() != out) {
      throw ConfigError(std::string(to_string(m.family)) + " network must map " + std::to_string(in) + " -> " +
                        std::to_string(out));
    }
  } else if (m.backbone == Backbone::graph) {
    graph::validate(m.gn);
    const auto& c = m.gn.config;
    if (c.feature_dim != detail::graph_feature_dim(m) || c.pos_dim != m.system.dim) {
      throw ConfigError("graph features do not match the system");
    }
    const bool scalar = c.output_kind == graph::OutputKind::scalar_energy;
    if (scalar != (m.family != Family::baseline) || (!scalar && c.out_dim != 2 * m.system.dim)) {
      throw ConfigError("graph output kind does not match the family");
    }
  }
}

/// Initialised predictor for one (family, graph) cell. Networks use the
/// configured widths; graph blocks share hidden width and depth.
inline ModelSpec build_model(const ModelConfig& cfg, const SystemSpec& system) {
  validate(system);
  if (cfg.hidden_width < 1 || cfg.hidden_layers < 0) throw ConfigError("network width must be >= 1");
  ModelSpec m;
  m.family = cfg.family;
  m.system = system;
  m.mass_inverse = Vector::Ones(system.size());
  m.backbone = cfg.use_graph ? Backbone::graph : Backbone::mlp;
  const int n = system.size();
  if (!cfg.use_graph) {
    std::vector<int> dims{cfg.family == Family::potential ? n : 2 * n};
    for (int k = 0; k < cfg.hidden_layers; ++k) dims.push_back(cfg.hidden_width);
    dims.push_back(cfg.family == Family::baseline ? 2 * n : 1);
    m.mlp = diffnet::net_init(dims, cfg.activation, cfg.seed);
  } else {
    m.node_constants = cfg.node_constants.value_or(node_constants(system).rows() > 0);
    graph::GnConfig g;
    g.feature_dim = detail::graph_feature_dim(m);
    g.pos_dim = system.dim;
    g.relative = cfg.relative.value_or(default_relative(system));
    g.message_dim = cfg.message_dim;
    g.embed_dim = cfg.embed_dim;
    g.hidden_width = cfg.hidden_width;
    g.hidden_layers = cfg.hidden_layers;
    g.activation = cfg.activation;
    g.output_kind = cfg.family == Family::baseline ? graph::OutputKind::node_derivatives
                                                   : graph::OutputKind::scalar_energy;
    g.out_dim = 2 * system.dim;
    m.gn = graph::gn_init(g, cfg.seed);
  }
  validate(m);
  return m;
}

/// Model whose backbone is the system's own Hamiltonian (or potential, or
/// vector field, depending on the family).
inline ModelSpec analytic_model(Family family, const SystemSpec& system) {
  validate(system);
  ModelSpec m;
  m.family = family;
  m.backbone = Backbone::analytic;
  m.system = system;
  m.mass_inverse = mass_inverse(system);
  return m;
}

// ---------------------------------------------------------------------------
// Bound views and the predicted field over either carrier

template <class T>
struct ModelView {
  const ModelSpec* spec = nullptr;
  NetView<T> mlp;
  graph::GnView<T> gn;
};

inline ModelView<Matrix> view(const ModelSpec& m) {
  ModelView<Matrix> v;
  v.spec = &m;
  if (m.backbone == Backbone::mlp) v.mlp = diffnet::view(m.mlp);
  if (m.backbone == Backbone::graph) v.gn = graph::view(m.gn);
  return v;
}

inline ModelView<Var> bind(Tape& tape, const ModelSpec& m) {
  ModelView<Var> v;
  v.spec = &m;
  if (m.backbone == Backbone::mlp) v.mlp = diffnet::bind(tape, m.mlp);
  if (m.backbone == Backbone::graph) v.gn = graph::bind(tape, m.gn);
  return v;
}

/// Gradients shaped like the model's parameter blocks.
inline std::vector<NetParams> gradients_from(const std::vector<Matrix>& adj, const ModelView<Var>& v,
                                             const ModelSpec& m) {
  if (m.backbone == Backbone::mlp) return {diffnet::gradients_from(adj, v.mlp, m.mlp)};
  std::vector<NetParams> out;
  if (m.backbone == Backbone::graph) {
    const auto g = graph::gradients_from(adj, v.gn, m.gn);
    for (const auto* b : graph::blocks(g)) out.push_back(*b);
  }
  return out;
}

/// PhaseField over column batches: q and p are (N*D) x B.
template <class T>
class ModelField {
 public:
  explicit ModelField(ModelView<T> v) : v_(std::move(v)), m_(*v_.spec) {}

  [[nodiscard]] std::pair<T, T> field(const T& q, const T& p) const {
    switch (m_.family) {
      case Family::baseline: return baseline(q, p);
      case Family::hamiltonian: {
        auto [dq, dp] = hamiltonian_gradient(q, p);
        return {std::move(dp), -dq};
      }
      case Family::potential: return {q_rate(q, p), p_rate(q, p)};
    }
    throw ContractError("unknown family");
  }

  [[nodiscard]] T q_rate(const T& q, const T& p) const {
    switch (m_.family) {
      case Family::baseline: return baseline(q, p).first;
      case Family::hamiltonian: return hamiltonian_gradient(q, p).second;
      case Family::potential:
        return m_.convention == Convention::generalized_qv ? p : scale_by_mass(p);
    }
    throw ContractError("unknown family");
  }

  [[nodiscard]] T p_rate(const T& q, const T& p) const {
    switch (m_.family) {
      case Family::baseline: return baseline(q, p).second;
      case Family::hamiltonian: return -hamiltonian_gradient(q, p).first;
      case Family::potential: {
        T g = potential_gradient(q);
        return m_.convention == Convention::generalized_qv ? -scale_by_mass(g) : -g;
      }
    }
    throw ContractError("unknown family");
  }

  /// Model-internal energy per sample (1 x B); hamiltonian and potential
  /// families only (potential adds the quadratic kinetic term).
  [[nodiscard]] T energy(const T& q, const T& p) const {
    if (m_.family == Family::baseline) throw ContractError("baseline models have no energy");
    T e = scalar(q, p);
    if (m_.family == Family::potential) {
      const T mp = scale_by_mass(p);
      const Eigen::Index n = diffnet::value_of(p).rows();
      e = e + 0.5 * diffnet::matmul(diffnet::constant_like(p, Matrix::Ones(1, n)), diffnet::hadamard(mp, p));
    }
    return e;
  }

 private:
  ModelView<T> v_;
  const ModelSpec& m_;

  void check(const T& q, const T& p) const {
    const auto& qv = diffnet::value_of(q);
    const auto& pv = diffnet::value_of(p);
    if (qv.rows() != m_.coords() || pv.rows() != m_.coords() || qv.cols() != pv.cols()) {
      throw ContractError("state batch does not match the model's system");
    }
  }

  [[nodiscard]] T scale_by_mass(const T& x) const {
    if ((m_.mass_inverse.array() == 1.0).all()) return x;
    const Matrix tiled = m_.mass_inverse.replicate(1, diffnet::value_of(x).cols());
    return diffnet::hadamard(diffnet::constant_like(x, tiled), x);
  }

  [[nodiscard]] graph::Topology topology(Eigen::Index batch) const {
    return graph::make_topology(m_.system.n_bodies, static_cast<int>(batch));
  }

  /// D x (N*B) node-major features [q_i, p_i, constants_i].
  [[nodiscard]] T node_features(const T& q, const T* p) const {
    const int d = m_.system.dim;
    const Eigen::Index cols = m_.system.n_bodies * diffnet::value_of(q).cols();
    std::vector<T> parts{diffnet::reshape(q, d, cols)};
    if (p != nullptr) parts.push_back(diffnet::reshape(*p, d, cols));
    if (m_.node_constants) {
      const Matrix c = node_constants(m_.system);
      parts.push_back(diffnet::constant_like(q, c.replicate(1, diffnet::value_of(q).cols())));
    }
    return parts.size() == 1 ? parts.front() : diffnet::vcat(parts);
  }

  [[nodiscard]] T to_coords(const T& node_rows) const {
    return diffnet::reshape(node_rows, m_.coords(), diffnet::value_of(node_rows).cols() / m_.system.n_bodies);
  }

  [[nodiscard]] std::pair<T, T> baseline(const T& q, const T& p) const {
    check(q, p);
    const int n = m_.coords();
    switch (m_.backbone) {
      case Backbone::mlp: {
        const T out = diffnet::mlp_forward(v_.mlp, diffnet::vcat(std::vector<T>{q, p}));
        return {diffnet::rows(out, 0, n), diffnet::rows(out, n, n)};
      }
      case Backbone::graph: {
        const int d = m_.system.dim;
        const T out = graph::gn_nodes(v_.gn, node_features(q, &p), topology(diffnet::value_of(q).cols()));
        return {to_coords(diffnet::rows(out, 0, d)), to_coords(diffnet::rows(out, d, d))};
      }
      case Backbone::analytic: {
        auto [dq, dp] = vector_field_batch(m_.system, diffnet::value_of(q), diffnet::value_of(p));
        return {diffnet::constant_like(q, std::move(dq)), diffnet::constant_like(p, std::move(dp))};
      }
    }
    throw ContractError("unknown backbone");
  }

  /// (dH/dq, dH/dp).
  [[nodiscard]] std::pair<T, T> hamiltonian_gradient(const T& q, const T& p) const {
    check(q, p);
    const int n = m_.coords();
    switch (m_.backbone) {
      case Backbone::mlp: {
        const T g = diffnet::mlp_input_gradient(v_.mlp, diffnet::vcat(std::vector<T>{q, p}));
        return {diffnet::rows(g, 0, n), diffnet::rows(g, n, n)};
      }
      case Backbone::graph: {
        const int d = m_.system.dim;
        const T g = graph::gn_feature_gradient(v_.gn, node_features(q, &p), topology(diffnet::value_of(q).cols()));
        return {to_coords(diffnet::rows(g, 0, d)), to_coords(diffnet::rows(g, d, d))};
      }
      case Backbone::analytic: {
        const Matrix& pv = diffnet::value_of(p);
        Matrix dhdp = m_.mass_inverse.asDiagonal() * pv;
        Matrix dhdq = potential_batch(m_.system, diffnet::value_of(q)).second;
        return {diffnet::constant_like(q, std::move(dhdq)), diffnet::constant_like(p, std::move(dhdp))};
      }
    }
    throw ContractError("unknown backbone");
  }

  [[nodiscard]] T potential_gradient(const T& q) const {
    switch (m_.backbone) {
      case Backbone::mlp: return diffnet::mlp_input_gradient(v_.mlp, q);
      case Backbone::graph: {
        const int d = m_.system.dim;
        const T g = graph::gn_feature_gradient(v_.gn, node_features(q, nullptr), topology(diffnet::value_of(q).cols()));
        return to_coords(diffnet::rows(g, 0, d));
      }
      case Backbone::analytic:
        return diffnet::constant_like(q, potential_batch(m_.system, diffnet::value_of(q)).second);
    }
    throw ContractError("unknown backbone");
  }

  /// Backbone scalar: H(q, p) for hamiltonian, E_pot(q) for potential.
  [[nodiscard]] T scalar(const T& q, const T& p) const {
    check(q, p);
    const bool ham = m_.family == Family::hamiltonian;
    switch (m_.backbone) {
      case Backbone::mlp: return diffnet::mlp_forward(v_.mlp, ham ? diffnet::vcat(std::vector<T>{q, p}) : q);
      case Backbone::graph:
        return graph::gn_energy(v_.gn, node_features(q, ham ? &p : nullptr), topology(diffnet::value_of(q).cols()));
      case Backbone::analytic: {
        const Matrix& qv = diffnet::value_of(q);
        Matrix e = potential_batch(m_.system, qv).first;
        if (ham) {
          const Matrix& pv = diffnet::value_of(p);
          for (Eigen::Index j = 0; j < pv.cols(); ++j) e(0, j) += kinetic_energy(m_.system, pv.col(j));
        }
        return diffnet::constant_like(q, std::move(e));
      }
    }
    throw ContractError("unknown backbone");
  }
};

// ---------------------------------------------------------------------------
// Single-state API

struct RecordedField {
  std::shared_ptr<Tape> tape;
  ModelView<Var> params;
  Var dq;
  Var dp;
};

inline RecordedField predicted_field(const ModelSpec& m, const PhaseState& s) {
  if (s.size() != m.coords()) throw ContractError("state does not match the model's system");
  RecordedField r;
  r.tape = std::make_shared<Tape>();
  r.params = bind(*r.tape, m);
  const ModelField<Var> f(r.params);
  std::tie(r.dq, r.dp) = f.field(r.tape->constant(s.q), r.tape->constant(s.p));
  if (!r.dq.value().allFinite() || !r.dp.value().allFinite()) throw DivergenceError("non-finite model output", -1);
  return r;
}

/// One value-mode step through the model's field.
inline PhaseState model_step(const ModelSpec& m, IntegratorId id, const PhaseState& s, double h) {
  if (s.size() != m.coords()) throw ContractError("state does not match the model's system");
  const ModelField<Matrix> f(view(m));
  auto [q, p] = integrate_step<Matrix>(id, f, Matrix(s.q), Matrix(s.p), h);
  return with_coordinates(s, q.col(0), p.col(0));
}

inline Stepper model_stepper(const ModelSpec& m, IntegratorId id) {
  return [&m, id](const PhaseState& s, double h) { return model_step(m, id, s, h); };
}

// ---------------------------------------------------------------------------
// Checkpoints: `<stem>.model.json` metadata plus the backbone files.

inline nlohmann::json system_to_json(const SystemSpec& s) {
  const auto& c = s.constants;
  return {{"kind", to_string(s.kind)},
          {"n_bodies", s.n_bodies},
          {"dim", s.dim},
          {"constants",
           {{"m", c.m}, {"k", c.k}, {"g", c.g}, {"l", c.l}, {"lambda", c.lambda},
            {"grav_exponent", c.grav_exponent}, {"spring_k", c.spring_k}}}};
}

inline SystemSpec system_from_json(const nlohmann::json& j) {
  SystemSpec s;
  s.kind = system_from_string(j.at("kind").get<std::string>());
  s.n_bodies = j.at("n_bodies").get<int>();
  s.dim = j.at("dim").get<int>();
  const auto& c = j.at("constants");
  s.constants.m = c.at("m").get<double>();
  s.constants.k = c.at("k").get<double>();
  s.constants.g = c.at("g").get<double>();
  s.constants.l = c.at("l").get<double>();
  s.constants.lambda = c.at("lambda").get<double>();
  s.constants.grav_exponent = c.at("grav_exponent").get<double>();
  s.constants.spring_k = c.at("spring_k").get<std::vector<double>>();
  validate(s);
  return s;
}

inline void save_model(const std::filesystem::path& stem, const ModelSpec& m) {
  nlohmann::json j;
  j["family"] = to_string(m.family);
  j["graph"] = m.use_graph();
  j["backbone"] = to_string(m.backbone);
  j["name"] = model_name(m.family, m.use_graph());
  j["system"] = system_to_json(m.system);
  j["mass_inverse"] = std::vector<double>(m.mass_inverse.data(), m.mass_inverse.data() + m.mass_inverse.size());
  j["convention"] = m.convention == Convention::canonical_qp ? "canonical_qp" : "generalized_qv";
  j["node_constants"] = m.node_constants;
  const std::string base = stem.filename().string();
  if (m.backbone == Backbone::mlp) {
    j["backbone_file"] = base + ".ckpt";
    diffnet::save_checkpoint((stem.parent_path() / (base + ".ckpt")).string(), m.mlp);
  } else if (m.backbone == Backbone::graph) {
    j["backbone_file"] = base + ".gn";
    graph::save_gn(stem.parent_path() / (base + ".gn"), m.gn);
  }
  std::ofstream out(stem.string() + ".model.json");
  if (!out) throw IoError("cannot write " + stem.string() + ".model.json");
  out << j.dump(2) << '\n';
}

inline ModelSpec load_model(const std::filesystem::path& stem) {
  std::ifstream in(stem.string() + ".model.json");
  if (!in) throw IoError("cannot read " + stem.string() + ".model.json");
  try {
    nlohmann::json j;
    in >> j;
    ModelSpec m;
    m.family = family_from_string(j.at("family").get<std::string>());
    const auto backbone = j.at("backbone").get<std::string>();
    m.backbone = backbone == "mlp" ? Backbone::mlp : backbone == "graph" ? Backbone::graph : Backbone::analytic;
    m.system = system_from_json(j.at("system"));
    const auto mi = j.at("mass_inverse").get<std::vector<double>>();
    m.mass_inverse = Eigen::Map<const Vector>(mi.data(), static_cast<Eigen::Index>(mi.size()));
    m.convention = j.at("convention").get<std::string>() == "generalized_qv" ? Convention::generalized_qv
                                                                            : Convention::canonical_qp;
    m.node_constants = j.at("node_constants").get<bool>();
    if (m.backbone == Backbone::mlp) {
      m.mlp = diffnet::load_checkpoint((stem.parent_path() / j.at("backbone_file").get<std::string>()).string());
    } else if (m.backbone == Backbone::graph) {
      m.gn = graph::load_gn(stem.parent_path() / j.at("backbone_file").get<std::string>());
    }
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad model metadata: ") + e.what());
  }
}

}  // namespace symplect::models
