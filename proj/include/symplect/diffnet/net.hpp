#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "symplect/diffnet/ops.hpp"
#include "symplect/diffnet/tape.hpp"
#include "symplect/errors.hpp"

namespace symplect::diffnet {

inline const char* to_string(Activation act) { return act == Activation::softplus ? "softplus" : "tanh"; }

inline Activation activation_from_string(const std::string& name) {
  if (name == "softplus") return Activation::softplus;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "' (expected softplus|tanh)");
}

/// Fully connected network with a linear output layer.
struct NetParams {
  std::vector<int> layer_dims;
  std::vector<Matrix> weights;  // weights[k]: layer_dims[k+1] x layer_dims[k]
  std::vector<Matrix> biases;   // biases[k]: layer_dims[k+1] x 1
  Activation activation = Activation::softplus;

  [[nodiscard]] std::size_t layers() const { return weights.size(); }
  [[nodiscard]] int input_dim() const { return layer_dims.empty() ? 0 : layer_dims.front(); }
  [[nodiscard]] int output_dim() const { return layer_dims.empty() ? 0 : layer_dims.back(); }
  [[nodiscard]] bool empty() const { return weights.empty(); }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
    return n;
  }

  friend bool operator==(const NetParams& a, const NetParams& b) {
    if (a.layer_dims != b.layer_dims || a.activation != b.activation || a.layers() != b.layers()) return false;
    for (std::size_t k = 0; k < a.layers(); ++k) {
      if (a.weights[k] != b.weights[k] || a.biases[k] != b.biases[k]) return false;
    }
    return true;
  }
};

/// Zero-filled parameters with the same shapes (gradient accumulators).
inline NetParams zeros_like(const NetParams& p) {
  NetParams z = p;
  for (auto& w : z.weights) w.setZero();
  for (auto& b : z.biases) b.setZero();
  return z;
}

/// All parameters as one vector: weights (layer order, row-major), then biases.
inline Vector flatten(const NetParams& p) {
  Vector out(static_cast<Eigen::Index>(p.parameter_count()));
  Eigen::Index at = 0;
  for (const auto& w : p.weights) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) out(at++) = w(i, j);
    }
  }
  for (const auto& b : p.biases) {
    for (Eigen::Index i = 0; i < b.rows(); ++i) out(at++) = b(i, 0);
  }
  return out;
}

/// Inverse of flatten, using `shape` for dimensions and activation.
inline NetParams unflatten(const NetParams& shape, const Vector& flat) {
  if (flat.size() != static_cast<Eigen::Index>(shape.parameter_count())) {
    throw ContractError("unflatten: parameter count mismatch");
  }
  NetParams p = shape;
  Eigen::Index at = 0;
  for (auto& w : p.weights) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = flat(at++);
    }
  }
  for (auto& b : p.biases) {
    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = flat(at++);
  }
  return p;
}

inline void validate(const NetParams& p) {
  if (p.layer_dims.size() < 2) throw ConfigError("network needs at least input and output dims");
  if (p.weights.size() + 1 != p.layer_dims.size() || p.biases.size() != p.weights.size()) {
    throw ConfigError("layer count does not match layer_dims");
  }
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    if (p.weights[k].rows() != p.layer_dims[k + 1] || p.weights[k].cols() != p.layer_dims[k]) {
      throw ConfigError("weight " + std::to_string(k) + " shape disagrees with layer_dims");
    }
    if (p.biases[k].rows() != p.layer_dims[k + 1] || p.biases[k].cols() != 1) {
      throw ConfigError("bias " + std::to_string(k) + " shape disagrees with layer_dims");
    }
    if (!p.weights[k].allFinite() || !p.biases[k].allFinite()) {
      throw ConfigError("non-finite parameter in layer " + std::to_string(k));
    }
  }
}

/// Gaussian weights with standard deviation 1/sqrt(fan_in), zero biases.
inline NetParams net_init(const std::vector<int>& layer_dims, Activation act, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least two entries");
  for (int d : layer_dims) {
    if (d <= 0) throw ConfigError("layer dims must be positive");
  }
  std::mt19937_64 rng(seed);
  NetParams p;
  p.layer_dims = layer_dims;
  p.activation = act;
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(layer_dims[k])));
    Matrix w(layer_dims[k + 1], layer_dims[k]);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Matrix::Zero(layer_dims[k + 1], 1));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Generic evaluation over either carrier.

template <class T>
struct NetView {
  std::vector<T> weights;
  std::vector<T> biases;
  Activation activation = Activation::softplus;
};

inline NetView<Matrix> view(const NetParams& p) { return {p.weights, p.biases, p.activation}; }

/// Registers every weight and bias as a parameter leaf on `tape`.
inline NetView<Var> bind(Tape& tape, const NetParams& p) {
  NetView<Var> v;
  v.activation = p.activation;
  for (std::size_t k = 0; k < p.layers(); ++k) {
    v.weights.push_back(tape.parameter(p.weights[k]));
    v.biases.push_back(tape.parameter(p.biases[k]));
  }
  return v;
}

/// Batched forward pass (columns of x are samples). Hidden pre-activations
/// are appended to `pre` when given; mlp_vjp_input needs them.
template <class T>
T mlp_forward(const NetView<T>& net, const T& x, std::vector<T>* pre = nullptr) {
  const std::size_t n = net.weights.size();
  if (pre != nullptr) pre->clear();
  T h = x;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    T z = add_bias(matmul(net.weights[k], h), net.biases[k]);
    h = activation(z, net.activation, 0);
    if (pre != nullptr) pre->push_back(std::move(z));
  }
  return add_bias(matmul(net.weights[n - 1], h), net.biases[n - 1]);
}

/// Vector-Jacobian product with respect to the input, built from the same
/// primitives as the forward pass so that the result stays differentiable
/// with respect to the weights.
template <class T>
T mlp_vjp_input(const NetView<T>& net, const std::vector<T>& pre, const T& upstream) {
  const std::size_t n = net.weights.size();
  if (pre.size() + 1 != n) throw ContractError("mlp_vjp_input: forward cache does not match network depth");
  T g = matmul_tn(net.weights[n - 1], upstream);
  for (std::size_t k = n - 1; k-- > 0;) {
    T s = hadamard(activation(pre[k], net.activation, 1), g);
    g = matmul_tn(net.weights[k], s);
  }
  return g;
}

/// Input gradient of a scalar-output network, column by column.
template <class T>
T mlp_input_gradient(const NetView<T>& net, const T& x) {
  std::vector<T> pre;
  T y = mlp_forward(net, x, &pre);
  Matrix ones = Matrix::Ones(1, value_of(y).cols());
  return mlp_vjp_input(net, pre, constant_like(y, std::move(ones)));
}

// ---------------------------------------------------------------------------
// Single-sample recorded entry points.

struct Recorded {
  std::shared_ptr<Tape> tape;
  NetView<Var> params;
  Var input;
  Var output;

  [[nodiscard]] Vector value() const { return output.value().col(0); }
};

namespace detail {

inline void check_input(const NetParams& p, const Vector& x) {
  if (p.empty()) throw ContractError("network has no layers");
  if (x.size() != p.input_dim()) {
    throw ContractError("input has " + std::to_string(x.size()) + " entries, network expects " +
                        std::to_string(p.input_dim()));
  }
  if (!x.allFinite()) throw ContractError("non-finite network input");
}

}  // namespace detail

inline Recorded net_forward(const NetParams& p, const Vector& x) {
  detail::check_input(p, x);
  Recorded r;
  r.tape = std::make_shared<Tape>();
  r.params = bind(*r.tape, p);
  r.input = r.tape->constant(x);
  r.output = mlp_forward(r.params, r.input);
  return r;
}

inline Recorded input_gradient(const NetParams& p, const Vector& x) {
  detail::check_input(p, x);
  if (p.output_dim() != 1) throw ContractError("input_gradient requires a scalar-output network");
  Recorded r;
  r.tape = std::make_shared<Tape>();
  r.params = bind(*r.tape, p);
  r.input = r.tape->constant(x);
  r.output = mlp_input_gradient(r.params, r.input);
  return r;
}

/// Reads the parameter adjoints of `bound` out of a finished reverse sweep.
inline NetParams gradients_from(const std::vector<Matrix>& adj, const NetView<Var>& bound, const NetParams& shape) {
  NetParams g = zeros_like(shape);
  for (std::size_t k = 0; k < bound.weights.size(); ++k) {
    const auto& aw = adj.at(bound.weights[k].id());
    const auto& ab = adj.at(bound.biases[k].id());
    if (aw.size() != 0) g.weights[k] = aw;
    if (ab.size() != 0) g.biases[k] = ab;
  }
  return g;
}

inline NetParams grad_params(const Tape& tape, const Var& loss, const NetView<Var>& bound, const NetParams& shape) {
  for (std::size_t k = 0; k < bound.weights.size(); ++k) {
    if (!tape.owns(bound.weights[k]) || !tape.owns(bound.biases[k])) {
      throw ContractError("parameters are not bound to this tape");
    }
  }
  return gradients_from(tape.backward(loss), bound, shape);
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then little-endian f64 weights (layer
// order, row-major) followed by the biases in layer order.

namespace detail {

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline double read_f64(std::istream& in) {
  std::uint64_t bits = 0;
  if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw IoError("checkpoint payload truncated");
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const NetParams& p) {
  nlohmann::json header;
  header["layer_dims"] = p.layer_dims;
  header["activation"] = to_string(p.activation);
  out << header.dump() << '\n';
  for (const auto& w : p.weights) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) detail::write_f64(out, w(i, j));
    }
  }
  for (const auto& b : p.biases) {
    for (Eigen::Index i = 0; i < b.rows(); ++i) detail::write_f64(out, b(i, 0));
  }
}

inline NetParams read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("checkpoint header missing");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }
  NetParams p;
  p.layer_dims = header.at("layer_dims").get<std::vector<int>>();
  p.activation = activation_from_string(header.at("activation").get<std::string>());
  if (p.layer_dims.size() < 2) throw IoError("checkpoint layer_dims too short");
  for (std::size_t k = 0; k + 1 < p.layer_dims.size(); ++k) {
    Matrix w(p.layer_dims[k + 1], p.layer_dims[k]);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = detail::read_f64(in);
    }
    p.weights.push_back(std::move(w));
  }
  for (std::size_t k = 0; k + 1 < p.layer_dims.size(); ++k) {
    Matrix b(p.layer_dims[k + 1], 1);
    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = detail::read_f64(in);
    p.biases.push_back(std::move(b));
  }
  validate(p);
  return p;
}

inline void save_checkpoint(const std::string& path, const NetParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_checkpoint(out, p);
}

inline NetParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  return read_checkpoint(in);
}

}  // namespace symplect::diffnet
