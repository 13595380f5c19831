#pragma once

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "symplect/diffnet/net.hpp"
#include "symplect/errors.hpp"
#include "symplect/systems.hpp"

namespace symplect::graph {

using diffnet::Activation;
using diffnet::IndexPtr;
using diffnet::NetParams;
using diffnet::NetView;
using diffnet::Tape;
using diffnet::Var;

// ---------------------------------------------------------------------------
// Graph structure

/// Single graph. Rows of node_features are nodes; edges are directed
/// (sender, receiver) pairs.
struct GraphState {
  Matrix node_features;
  std::vector<std::pair<int, int>> edge_index;
  Matrix edge_features;  // E x 0
  Vector globals;        // empty

  [[nodiscard]] int nodes() const { return static_cast<int>(node_features.rows()); }
  [[nodiscard]] int edges() const { return static_cast<int>(edge_index.size()); }
};

inline std::vector<std::pair<int, int>> fully_connected(int n) {
  std::vector<std::pair<int, int>> e;
  e.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(std::max(0, n - 1)));
  for (int r = 0; r < n; ++r) {
    for (int s = 0; s < n; ++s) {
      if (s != r) e.emplace_back(s, r);
    }
  }
  return e;
}

inline void validate(const GraphState& g) {
  for (auto [s, r] : g.edge_index) {
    if (s == r) throw ContractError("graph contains a self loop");
    if (s < 0 || r < 0 || s >= g.nodes() || r >= g.nodes()) throw ContractError("edge index out of range");
  }
}

/// Fully connected graph over the bodies of `state`; node features are the
/// body's position, followed by its momentum when requested.
inline GraphState build_graph(const PhaseState& state, bool include_momentum) {
  if (state.n_bodies < 1) throw ContractError("graph needs at least one body");
  const int n = state.n_bodies;
  const int d = state.dim;
  GraphState g;
  g.node_features = Matrix(n, include_momentum ? 2 * d : d);
  for (int i = 0; i < n; ++i) {
    g.node_features.row(i).head(d) = state.q.segment(i * d, d).transpose();
    if (include_momentum) g.node_features.row(i).tail(d) = state.p.segment(i * d, d).transpose();
  }
  g.edge_index = fully_connected(n);
  g.edge_features = Matrix(g.edge_index.size(), 0);
  return g;
}

/// Edge lists replicated over a batch of B graphs with identical topology,
/// as column indices into the N*B node columns.
struct Topology {
  int n_nodes = 0;
  int batch = 0;
  IndexPtr senders;
  IndexPtr receivers;

  [[nodiscard]] int node_columns() const { return n_nodes * batch; }
};

inline Topology make_topology(int n_nodes, int batch, const std::vector<std::pair<int, int>>& edges) {
  diffnet::Index snd;
  diffnet::Index rcv;
  snd.reserve(edges.size() * static_cast<std::size_t>(batch));
  rcv.reserve(edges.size() * static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    for (auto [s, r] : edges) {
      snd.push_back(b * n_nodes + s);
      rcv.push_back(b * n_nodes + r);
    }
  }
  return {n_nodes, batch, std::make_shared<const diffnet::Index>(std::move(snd)),
          std::make_shared<const diffnet::Index>(std::move(rcv))};
}

inline Topology make_topology(int n_nodes, int batch) { return make_topology(n_nodes, batch, fully_connected(n_nodes)); }

// ---------------------------------------------------------------------------
// Parameters

enum class OutputKind { scalar_energy, node_derivatives };

inline const char* to_string(OutputKind k) {
  return k == OutputKind::scalar_energy ? "scalar_energy" : "node_derivatives";
}

inline OutputKind output_kind_from_string(const std::string& s) {
  if (s == "scalar_energy") return OutputKind::scalar_energy;
  if (s == "node_derivatives") return OutputKind::node_derivatives;
  throw ConfigError("unknown graph output kind '" + s + "'");
}

/// The first `pos_dim` node features are positions. In relative mode the edge
/// block sees (x_s - x_r) for those and the raw remaining features of both
/// ends, and the node block never sees absolute positions.
struct GnConfig {
  int feature_dim = 1;
  int pos_dim = 1;
  bool relative = false;
  int message_dim = 32;
  int embed_dim = 32;
  int hidden_width = 300;
  int hidden_layers = 2;
  OutputKind output_kind = OutputKind::scalar_energy;
  int out_dim = 1;  // per-node output width for node_derivatives
  Activation activation = Activation::softplus;

  [[nodiscard]] int extra_dim() const { return relative ? feature_dim - pos_dim : feature_dim; }
  [[nodiscard]] int edge_input_dim() const { return relative ? pos_dim + 2 * extra_dim() : 2 * feature_dim; }
  [[nodiscard]] int node_input_dim() const { return extra_dim() + message_dim; }

  friend bool operator==(const GnConfig&, const GnConfig&) = default;
};

struct GnParams {
  GnConfig config;
  NetParams edge_block;
  NetParams node_block;
  NetParams global_block;  // empty for node_derivatives

  [[nodiscard]] std::size_t parameter_count() const {
    return edge_block.parameter_count() + node_block.parameter_count() + global_block.parameter_count();
  }
  friend bool operator==(const GnParams&, const GnParams&) = default;
};

inline void validate(const GnConfig& c) {
  if (c.feature_dim < 1 || c.pos_dim < 0 || c.message_dim < 1 || c.embed_dim < 1 || c.hidden_width < 1 ||
      c.hidden_layers < 0 || c.out_dim < 1) {
    throw ConfigError("graph network dimensions must be positive");
  }
  if (c.relative && (c.pos_dim < 1 || c.pos_dim > c.feature_dim)) {
    throw ConfigError("relative edges need 1 <= pos_dim <= feature_dim");
  }
}

namespace detail {

inline std::vector<int> block_dims(int in, const GnConfig& c, int out) {
  std::vector<int> dims{in};
  for (int k = 0; k < c.hidden_layers; ++k) dims.push_back(c.hidden_width);
  dims.push_back(out);
  return dims;
}

}  // namespace detail

inline GnParams gn_init(const GnConfig& c, std::uint64_t seed) {
  validate(c);
  GnParams p;
  p.config = c;
  p.edge_block = diffnet::net_init(detail::block_dims(c.edge_input_dim(), c, c.message_dim), c.activation, seed);
  const int node_out = c.output_kind == OutputKind::scalar_energy ? c.embed_dim : c.out_dim;
  p.node_block = diffnet::net_init(detail::block_dims(c.node_input_dim(), c, node_out), c.activation, seed + 1);
  if (c.output_kind == OutputKind::scalar_energy) {
    p.global_block = diffnet::net_init(detail::block_dims(c.embed_dim, c, 1), c.activation, seed + 2);
  }
  return p;
}

inline void validate(const GnParams& p) {
  validate(p.config);
  const auto& c = p.config;
  diffnet::validate(p.edge_block);
  diffnet::validate(p.node_block);
  if (p.edge_block.input_dim() != c.edge_input_dim() || p.edge_block.output_dim() != c.message_dim) {
    throw ContractError("edge block dims disagree with the graph configuration");
  }
  if (p.node_block.input_dim() != c.node_input_dim()) throw ContractError("node block input dim mismatch");
  if (c.output_kind == OutputKind::scalar_energy) {
    diffnet::validate(p.global_block);
    if (p.node_block.output_dim() != c.embed_dim || p.global_block.input_dim() != c.embed_dim ||
        p.global_block.output_dim() != 1) {
      throw ContractError("node/global block dims disagree with the graph configuration");
    }
  } else if (p.node_block.output_dim() != c.out_dim) {
    throw ContractError("node block output dim mismatch");
  }
}

/// Blocks in a fixed order (edge, node[, global]) for optimizers and IO.
inline std::vector<NetParams*> blocks(GnParams& p) {
  std::vector<NetParams*> out{&p.edge_block, &p.node_block};
  if (!p.global_block.empty()) out.push_back(&p.global_block);
  return out;
}

inline std::vector<const NetParams*> blocks(const GnParams& p) {
  std::vector<const NetParams*> out{&p.edge_block, &p.node_block};
  if (!p.global_block.empty()) out.push_back(&p.global_block);
  return out;
}

template <class T>
struct GnView {
  GnConfig config;
  NetView<T> edge;
  NetView<T> node;
  NetView<T> global;
};

inline GnView<Matrix> view(const GnParams& p) {
  return {p.config, diffnet::view(p.edge_block), diffnet::view(p.node_block), diffnet::view(p.global_block)};
}

inline GnView<Var> bind(Tape& tape, const GnParams& p) {
  return {p.config, diffnet::bind(tape, p.edge_block), diffnet::bind(tape, p.node_block),
          diffnet::bind(tape, p.global_block)};
}

// ---------------------------------------------------------------------------
// Batched message passing over either carrier. X is F x (N*B), node-major
// within each sample.

template <class T>
struct GnCache {
  std::vector<T> edge_pre;
  std::vector<T> node_pre;
  std::vector<T> global_pre;
  T node_out;
};

namespace detail {

template <class T>
T edge_inputs(const GnConfig& c, const T& x, const Topology& topo) {
  using diffnet::gather_cols;
  using diffnet::rows;
  using diffnet::vcat;
  if (!c.relative) return vcat(std::vector<T>{gather_cols(x, topo.senders), gather_cols(x, topo.receivers)});
  const T pos = rows(x, 0, c.pos_dim);
  std::vector<T> parts{gather_cols(pos, topo.senders) - gather_cols(pos, topo.receivers)};
  if (c.extra_dim() > 0) {
    const T extra = rows(x, c.pos_dim, c.extra_dim());
    parts.push_back(gather_cols(extra, topo.senders));
    parts.push_back(gather_cols(extra, topo.receivers));
  }
  return parts.size() == 1 ? parts.front() : vcat(parts);
}

template <class T>
T node_inputs(const GnConfig& c, const T& x, const T& agg) {
  if (c.extra_dim() == 0) return agg;
  const T extra = c.relative ? diffnet::rows(x, c.pos_dim, c.extra_dim()) : x;
  return diffnet::vcat(std::vector<T>{extra, agg});
}

template <class T>
void check_features(const GnConfig& c, const T& x, const Topology& topo) {
  const auto& v = diffnet::value_of(x);
  if (v.rows() != c.feature_dim || v.cols() != topo.node_columns()) {
    throw ContractError("node features are " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                        ", graph network expects " + std::to_string(c.feature_dim) + "x" +
                        std::to_string(topo.node_columns()));
  }
}

}  // namespace detail

/// Node block output, out_dim (or embed_dim) x (N*B).
template <class T>
T gn_nodes(const GnView<T>& net, const T& x, const Topology& topo, GnCache<T>* cache = nullptr) {
  const auto& c = net.config;
  detail::check_features(c, x, topo);
  std::vector<T> edge_pre;
  std::vector<T> node_pre;
  const T msg = diffnet::mlp_forward(net.edge, detail::edge_inputs(c, x, topo), &edge_pre);
  const T agg = diffnet::scatter_cols(msg, topo.receivers, topo.node_columns());
  T out = diffnet::mlp_forward(net.node, detail::node_inputs(c, x, agg), &node_pre);
  if (cache != nullptr) {
    cache->edge_pre = std::move(edge_pre);
    cache->node_pre = std::move(node_pre);
    cache->node_out = out;
  }
  return out;
}

/// Per-sample energy (1 x B): the sum over a sample's nodes of the global
/// block applied to each node embedding.
template <class T>
T gn_energy(const GnView<T>& net, const T& x, const Topology& topo, GnCache<T>* cache = nullptr) {
  if (net.config.output_kind != OutputKind::scalar_energy) throw ContractError("graph network has no scalar output");
  GnCache<T> local;
  GnCache<T>& cc = cache != nullptr ? *cache : local;
  const T emb = gn_nodes(net, x, topo, &cc);
  const T per_node = diffnet::mlp_forward(net.global, emb, &cc.global_pre);
  const T grid = diffnet::reshape(per_node, topo.n_nodes, topo.batch);
  return diffnet::matmul(diffnet::constant_like(grid, Matrix::Ones(1, topo.n_nodes)), grid);
}

/// Gradient of each sample's energy with respect to its node features,
/// F x (N*B), as an explicit chain of vector-Jacobian products (differentiable
/// in the parameters when T is a tape variable).
template <class T>
T gn_feature_gradient(const GnView<T>& net, const T& x, const Topology& topo) {
  using diffnet::gather_cols;
  using diffnet::rows;
  using diffnet::scatter_cols;
  const auto& c = net.config;
  GnCache<T> cache;
  (void)gn_energy(net, x, topo, &cache);
  const Eigen::Index cols = topo.node_columns();
  const T ones = diffnet::constant_like(x, Matrix::Ones(1, cols));
  const T u_emb = diffnet::mlp_vjp_input(net.global, cache.global_pre, ones);
  const T u_in = diffnet::mlp_vjp_input(net.node, cache.node_pre, u_emb);
  const T u_agg = rows(u_in, c.extra_dim(), c.message_dim);
  const T u_edge = diffnet::mlp_vjp_input(net.edge, cache.edge_pre, gather_cols(u_agg, topo.receivers));

  auto spread = [&](const T& from_edges_s, const T& from_edges_r) -> T {
    return scatter_cols(from_edges_s, topo.senders, cols) + scatter_cols(from_edges_r, topo.receivers, cols);
  };
  if (!c.relative) {
    const int f = c.feature_dim;
    return spread(rows(u_edge, 0, f), rows(u_edge, f, f)) + rows(u_in, 0, f);
  }
  const T u_rel = rows(u_edge, 0, c.pos_dim);
  const T u_pos = spread(u_rel, -u_rel);
  if (c.extra_dim() == 0) return u_pos;
  const int e = c.extra_dim();
  const T u_extra = spread(rows(u_edge, c.pos_dim, e), rows(u_edge, c.pos_dim + e, e)) + rows(u_in, 0, e);
  return diffnet::vcat(std::vector<T>{u_pos, u_extra});
}

// ---------------------------------------------------------------------------
// Single-graph recorded entry points

struct GnRecorded {
  std::shared_ptr<Tape> tape;
  GnView<Var> params;
  Var input;   // F x N
  Var output;  // 1 x 1 energy, out_dim x N derivatives, or F x N gradient
};

namespace detail {

inline Topology single_topology(const GnParams& p, const GraphState& g) {
  validate(g);
  if (g.node_features.cols() != p.config.feature_dim) {
    throw ContractError("graph has " + std::to_string(g.node_features.cols()) + " node features, network expects " +
                        std::to_string(p.config.feature_dim));
  }
  if (!g.node_features.allFinite()) throw ContractError("non-finite node features");
  return make_topology(g.nodes(), 1, g.edge_index);
}

}  // namespace detail

/// Energy (scalar_energy) or per-node outputs (node_derivatives, one column
/// per node) for one graph.
inline GnRecorded gn_forward(const GnParams& p, const GraphState& g) {
  const Topology topo = detail::single_topology(p, g);
  GnRecorded r;
  r.tape = std::make_shared<Tape>();
  r.params = bind(*r.tape, p);
  r.input = r.tape->constant(g.node_features.transpose());
  r.output = p.config.output_kind == OutputKind::scalar_energy ? gn_energy(r.params, r.input, topo)
                                                               : gn_nodes(r.params, r.input, topo);
  return r;
}

/// dE/d(node features), one column per node.
inline GnRecorded gn_input_gradient(const GnParams& p, const GraphState& g) {
  const Topology topo = detail::single_topology(p, g);
  GnRecorded r;
  r.tape = std::make_shared<Tape>();
  r.params = bind(*r.tape, p);
  r.input = r.tape->constant(g.node_features.transpose());
  r.output = gn_feature_gradient(r.params, r.input, topo);
  return r;
}

inline GnParams gradients_from(const std::vector<Matrix>& adj, const GnView<Var>& bound, const GnParams& shape) {
  GnParams g = shape;
  g.edge_block = diffnet::gradients_from(adj, bound.edge, shape.edge_block);
  g.node_block = diffnet::gradients_from(adj, bound.node, shape.node_block);
  g.global_block = diffnet::gradients_from(adj, bound.global, shape.global_block);
  return g;
}

inline GnParams gn_grad_params(const Tape& tape, const Var& loss, const GnView<Var>& bound, const GnParams& shape) {
  for (const auto* v : {&bound.edge, &bound.node, &bound.global}) {
    for (std::size_t k = 0; k < v->weights.size(); ++k) {
      if (!tape.owns(v->weights[k]) || !tape.owns(v->biases[k])) {
        throw ContractError("parameters are not bound to this tape");
      }
    }
  }
  return gradients_from(tape.backward(loss), bound, shape);
}

// ---------------------------------------------------------------------------
// Checkpoints: a JSON envelope plus one diffnet checkpoint per block.

inline nlohmann::json to_json(const GnConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"pos_dim", c.pos_dim},
          {"relative", c.relative},
          {"message_dim", c.message_dim},
          {"embed_dim", c.embed_dim},
          {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"output_kind", to_string(c.output_kind)},
          {"out_dim", c.out_dim},
          {"activation", diffnet::to_string(c.activation)}};
}

inline GnConfig gn_config_from_json(const nlohmann::json& j) {
  try {
    GnConfig c;
    c.feature_dim = j.at("feature_dim").get<int>();
    c.pos_dim = j.at("pos_dim").get<int>();
    c.relative = j.at("relative").get<bool>();
    c.message_dim = j.at("message_dim").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.hidden_width = j.at("hidden_width").get<int>();
    c.hidden_layers = j.at("hidden_layers").get<int>();
    c.output_kind = output_kind_from_string(j.at("output_kind").get<std::string>());
    c.out_dim = j.at("out_dim").get<int>();
    c.activation = diffnet::activation_from_string(j.at("activation").get<std::string>());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad graph envelope: ") + e.what());
  }
}

/// Writes `<stem>.json` and one `<stem>.<block>.ckpt` per block.
inline void save_gn(const std::filesystem::path& stem, const GnParams& p) {
  nlohmann::json env;
  env["config"] = to_json(p.config);
  env["output_kind"] = to_string(p.config.output_kind);
  nlohmann::json names = nlohmann::json::object();
  const std::vector<std::pair<std::string, const NetParams*>> named = {
      {"edge_block", &p.edge_block}, {"node_block", &p.node_block}, {"global_block", &p.global_block}};
  for (const auto& [name, block] : named) {
    if (block->empty()) continue;
    const std::string file = stem.filename().string() + "." + name + ".ckpt";
    names[name] = file;
    diffnet::save_checkpoint((stem.parent_path() / file).string(), *block);
  }
  env["blocks"] = names;
  std::ofstream out(stem.string() + ".json");
  if (!out) throw IoError("cannot write " + stem.string() + ".json");
  out << env.dump(2) << '\n';
}

inline GnParams load_gn(const std::filesystem::path& stem) {
  std::ifstream in(stem.string() + ".json");
  if (!in) throw IoError("cannot read " + stem.string() + ".json");
  nlohmann::json env;
  try {
    in >> env;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad graph envelope: ") + e.what());
  }
  GnParams p;
  p.config = gn_config_from_json(env.at("config"));
  const auto& names = env.at("blocks");
  auto load = [&](const char* name) {
    return diffnet::load_checkpoint((stem.parent_path() / names.at(name).get<std::string>()).string());
  };
  p.edge_block = load("edge_block");
  p.node_block = load("node_block");
  if (names.contains("global_block")) p.global_block = load("global_block");
  validate(p);
  return p;
}

}  // namespace symplect::graph
