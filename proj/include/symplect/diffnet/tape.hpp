#pragma once

// Matrix-valued reverse-mode tape. Every node holds a dense matrix whose
// columns are batch samples; operations are recorded eagerly and replayed in
// reverse for adjoints. Derivatives of activations are first-class nodes, so
// an explicitly built input-gradient graph can itself be differentiated.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "symplect/errors.hpp"

namespace symplect::diffnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = std::vector<int>;
using IndexPtr = std::shared_ptr<const Index>;

enum class Activation { softplus, tanh };

constexpr int kMaxActivationOrder = 3;

/// k-th derivative of the activation at x, k in [0, kMaxActivationOrder].
inline double activation_derivative(Activation act, int order, double x) {
  if (act == Activation::softplus) {
    // softplus' = sigmoid; higher orders are polynomials in the sigmoid.
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    switch (order) {
      case 0: return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      case 1: return s;
      case 2: return s * (1.0 - s);
      case 3: return s * (1.0 - s) * (1.0 - 2.0 * s);
      default: break;
    }
  } else {
    const double t = std::tanh(x);
    const double d = 1.0 - t * t;
    switch (order) {
      case 0: return t;
      case 1: return d;
      case 2: return -2.0 * t * d;
      case 3: return d * (6.0 * t * t - 2.0);
      default: break;
    }
  }
  throw ContractError("activation derivative order out of range");
}

inline Matrix apply_activation(const Matrix& z, Activation act, int order) {
  if (order < 0 || order > kMaxActivationOrder) {
    throw ContractError("activation derivative order out of range");
  }
  const auto x = z.array();
  if (act == Activation::softplus) {
    if (order == 0) return (x.max(0.0) + (-x.abs()).exp().log1p()).matrix();
    const Eigen::ArrayXXd s = (1.0 + (-x).exp()).inverse();
    if (order == 1) return s.matrix();
    if (order == 2) return (s * (1.0 - s)).matrix();
    return (s * (1.0 - s) * (1.0 - 2.0 * s)).matrix();
  }
  const Eigen::ArrayXXd t = x.tanh();
  const Eigen::ArrayXXd d = 1.0 - t.square();
  if (order == 0) return t.matrix();
  if (order == 1) return d.matrix();
  if (order == 2) return (-2.0 * t * d).matrix();
  return (d * (6.0 * t.square() - 2.0)).matrix();
}

enum class Op : std::uint8_t {
  constant,
  parameter,
  matmul,     // A * B
  matmul_tn,  // A^T * B
  add_bias,   // X + b broadcast over columns
  add,
  sub,
  hadamard,
  scale,
  activation,
  square,
  sum_all,
  rows,
  vcat,
  gather_cols,
  scatter_cols,
  reshape,
};

struct Node {
  Op op = Op::constant;
  std::vector<int> inputs;
  double scalar = 0.0;
  Activation act = Activation::softplus;
  int order = 0;
  Eigen::Index a = 0;
  Eigen::Index b = 0;
  IndexPtr index;
  bool needs_grad = false;
  Matrix value;
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] int id() const { return id_; }
  [[nodiscard]] const Matrix& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

namespace detail {

inline Matrix gather(const Matrix& x, const Index& idx) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(idx[j]);
  return out;
}

inline Matrix scatter(const Matrix& x, const Index& idx, Eigen::Index ncols) {
  Matrix out = Matrix::Zero(x.rows(), ncols);
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(idx[j]) += x.col(static_cast<Eigen::Index>(j));
  return out;
}

inline Matrix reshaped(const Matrix& x, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(x.data(), rows, cols);
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var parameter(Matrix value) {
    Node n;
    n.op = Op::parameter;
    n.needs_grad = true;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Records `n` (inputs and attributes filled in) and evaluates it.
  Var record(Node n) {
    for (int in : n.inputs) {
      if (in < 0 || in >= size()) throw ContractError("tape input out of range");
      n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    }
    n.value = evaluate(n, [this](int i) -> const Matrix& { return nodes_[i].value; });
    return push(std::move(n));
  }

  [[nodiscard]] int size() const { return static_cast<int>(nodes_.size()); }
  [[nodiscard]] const Node& node(int id) const { return nodes_.at(id); }
  [[nodiscard]] const Matrix& value(int id) const { return nodes_.at(id).value; }

  [[nodiscard]] bool owns(const Var& v) const { return v.tape() == this && v.id() >= 0 && v.id() < size(); }

  /// Adjoints of every node with respect to the scalar `loss`. Entries for
  /// nodes that do not influence the loss are empty matrices.
  [[nodiscard]] std::vector<Matrix> backward(const Var& loss) const {
    if (!owns(loss)) throw ContractError("loss node is not on this tape");
    const Node& ln = nodes_[loss.id()];
    if (ln.value.rows() != 1 || ln.value.cols() != 1) throw ContractError("loss node must be scalar");

    std::vector<Matrix> adj(nodes_.size());
    adj[loss.id()] = Matrix::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      if (adj[i].size() == 0 || !nodes_[i].needs_grad) continue;
      propagate(i, adj);
    }
    return adj;
  }

  /// Re-evaluates every recorded node from its inputs and reports whether
  /// all values match the recorded ones bit for bit.
  [[nodiscard]] bool replay() const {
    std::vector<Matrix> vals(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::constant || n.op == Op::parameter) {
        vals[i] = n.value;
      } else {
        vals[i] = evaluate(n, [&vals](int k) -> const Matrix& { return vals[k]; });
      }
      if (vals[i].rows() != n.value.rows() || vals[i].cols() != n.value.cols()) return false;
      for (Eigen::Index k = 0; k < n.value.size(); ++k) {
        const double x = vals[i].data()[k];
        const double y = n.value.data()[k];
        if (!(x == y || (std::isnan(x) && std::isnan(y)))) return false;
      }
    }
    return true;
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, size() - 1);
  }

  template <class Get>
  static Matrix evaluate(const Node& n, Get&& in) {
    auto arg = [&](std::size_t k) -> const Matrix& { return in(n.inputs.at(k)); };
    switch (n.op) {
      case Op::constant:
      case Op::parameter:
        return n.value;
      case Op::matmul:
        return arg(0) * arg(1);
      case Op::matmul_tn:
        return arg(0).transpose() * arg(1);
      case Op::add_bias:
        return arg(0).colwise() + arg(1).col(0);
      case Op::add:
        return arg(0) + arg(1);
      case Op::sub:
        return arg(0) - arg(1);
      case Op::hadamard:
        return arg(0).cwiseProduct(arg(1));
      case Op::scale:
        return n.scalar * arg(0);
      case Op::activation:
        return apply_activation(arg(0), n.act, n.order);
      case Op::square:
        return arg(0).array().square().matrix();
      case Op::sum_all:
        return Matrix::Constant(1, 1, arg(0).sum());
      case Op::rows:
        return arg(0).middleRows(n.a, n.b);
      case Op::vcat: {
        Eigen::Index total = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) total += arg(k).rows();
        Matrix out(total, arg(0).cols());
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          out.middleRows(at, arg(k).rows()) = arg(k);
          at += arg(k).rows();
        }
        return out;
      }
      case Op::gather_cols:
        return detail::gather(arg(0), *n.index);
      case Op::scatter_cols:
        return detail::scatter(arg(0), *n.index, n.a);
      case Op::reshape:
        return detail::reshaped(arg(0), n.a, n.b);
    }
    throw ContractError("unknown tape op");
  }

  void accumulate(std::vector<Matrix>& adj, int id, const Matrix& g) const {
    if (!nodes_[id].needs_grad) return;
    if (adj[id].size() == 0) {
      adj[id] = g;
    } else {
      adj[id] += g;
    }
  }

  void propagate(int i, std::vector<Matrix>& adj) const {
    const Node& n = nodes_[i];
    const Matrix& g = adj[i];
    auto in = [&](std::size_t k) { return n.inputs.at(k); };
    auto val = [&](std::size_t k) -> const Matrix& { return nodes_[in(k)].value; };
    auto wants = [&](std::size_t k) { return nodes_[in(k)].needs_grad; };

    switch (n.op) {
      case Op::constant:
      case Op::parameter:
        return;
      case Op::matmul:
        if (wants(0)) accumulate(adj, in(0), g * val(1).transpose());
        if (wants(1)) accumulate(adj, in(1), val(0).transpose() * g);
        return;
      case Op::matmul_tn:
        if (wants(0)) accumulate(adj, in(0), val(1) * g.transpose());
        if (wants(1)) accumulate(adj, in(1), val(0) * g);
        return;
      case Op::add_bias:
        accumulate(adj, in(0), g);
        if (wants(1)) accumulate(adj, in(1), g.rowwise().sum());
        return;
      case Op::add:
        accumulate(adj, in(0), g);
        accumulate(adj, in(1), g);
        return;
      case Op::sub:
        accumulate(adj, in(0), g);
        if (wants(1)) accumulate(adj, in(1), -g);
        return;
      case Op::hadamard:
        if (wants(0)) accumulate(adj, in(0), g.cwiseProduct(val(1)));
        if (wants(1)) accumulate(adj, in(1), g.cwiseProduct(val(0)));
        return;
      case Op::scale:
        accumulate(adj, in(0), n.scalar * g);
        return;
      case Op::activation:
        if (n.order + 1 > kMaxActivationOrder) throw ContractError("activation derivative order too high");
        accumulate(adj, in(0), g.cwiseProduct(apply_activation(val(0), n.act, n.order + 1)));
        return;
      case Op::square:
        accumulate(adj, in(0), 2.0 * g.cwiseProduct(val(0)));
        return;
      case Op::sum_all:
        accumulate(adj, in(0), Matrix::Constant(val(0).rows(), val(0).cols(), g(0, 0)));
        return;
      case Op::rows: {
        if (!wants(0)) return;
        Matrix full = Matrix::Zero(val(0).rows(), val(0).cols());
        full.middleRows(n.a, n.b) = g;
        accumulate(adj, in(0), full);
        return;
      }
      case Op::vcat: {
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Eigen::Index r = val(k).rows();
          if (wants(k)) accumulate(adj, in(k), g.middleRows(at, r));
          at += r;
        }
        return;
      }
      case Op::gather_cols:
        accumulate(adj, in(0), detail::scatter(g, *n.index, val(0).cols()));
        return;
      case Op::scatter_cols:
        accumulate(adj, in(0), detail::gather(g, *n.index));
        return;
      case Op::reshape:
        accumulate(adj, in(0), detail::reshaped(g, val(0).rows(), val(0).cols()));
        return;
    }
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const {
  if (tape_ == nullptr) throw ContractError("unbound tape variable");
  return tape_->value(id_);
}

}  // namespace symplect::diffnet
