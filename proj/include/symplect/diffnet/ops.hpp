#pragma once

// One vocabulary of primitives over two carriers: plain matrices (value mode,
// used for evaluation rollouts) and tape variables (recorded, differentiable).
// Generic code written against these functions runs unchanged in both modes.

#include <memory>
#include <vector>

#include "symplect/diffnet/tape.hpp"

namespace symplect::diffnet {

// ---------------------------------------------------------------------------
// Value mode

inline Matrix matmul(const Matrix& a, const Matrix& b) { return a * b; }
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) { return a.transpose() * b; }
inline Matrix add_bias(const Matrix& x, const Matrix& bias) { return x.colwise() + bias.col(0); }
inline Matrix hadamard(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b); }
inline Matrix activation(const Matrix& x, Activation act, int order) { return apply_activation(x, act, order); }
inline Matrix square(const Matrix& x) { return x.array().square().matrix(); }
inline Matrix sum_all(const Matrix& x) { return Matrix::Constant(1, 1, x.sum()); }
inline Matrix rows(const Matrix& x, Eigen::Index start, Eigen::Index count) { return x.middleRows(start, count); }
inline Matrix gather_cols(const Matrix& x, const IndexPtr& idx) { return detail::gather(x, *idx); }
inline Matrix scatter_cols(const Matrix& x, const IndexPtr& idx, Eigen::Index ncols) {
  return detail::scatter(x, *idx, ncols);
}
inline Matrix reshape(const Matrix& x, Eigen::Index r, Eigen::Index c) {
  if (r * c != x.size()) throw ContractError("reshape size mismatch");
  return detail::reshaped(x, r, c);
}
inline Matrix vcat(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw ContractError("vcat of nothing");
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.rows();
  Matrix out(total, parts.front().cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}
inline Matrix constant_like(const Matrix&, Matrix value) { return value; }
inline const Matrix& value_of(const Matrix& x) { return x; }

// ---------------------------------------------------------------------------
// Tape mode

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw ContractError("unbound tape variable");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ContractError("variables live on different tapes");
  return tape_of(a);
}

inline Var record(Tape& t, Op op, std::vector<int> inputs) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  return t.record(std::move(n));
}

inline void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError(std::string(what) + ": shape mismatch");
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ContractError("matmul: inner dimension mismatch");
  return detail::record(detail::tape_of(a, b), Op::matmul, {a.id(), b.id()});
}

inline Var matmul_tn(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ContractError("matmul_tn: inner dimension mismatch");
  return detail::record(detail::tape_of(a, b), Op::matmul_tn, {a.id(), b.id()});
}

inline Var add_bias(const Var& x, const Var& bias) {
  if (bias.cols() != 1 || bias.rows() != x.rows()) throw ContractError("add_bias: shape mismatch");
  return detail::record(detail::tape_of(x, bias), Op::add_bias, {x.id(), bias.id()});
}

inline Var operator+(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return detail::record(detail::tape_of(a, b), Op::add, {a.id(), b.id()});
}

inline Var operator-(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::record(detail::tape_of(a, b), Op::sub, {a.id(), b.id()});
}

inline Var hadamard(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "hadamard");
  return detail::record(detail::tape_of(a, b), Op::hadamard, {a.id(), b.id()});
}

inline Var operator*(double s, const Var& x) {
  Node n;
  n.op = Op::scale;
  n.inputs = {x.id()};
  n.scalar = s;
  return detail::tape_of(x).record(std::move(n));
}

inline Var operator*(const Var& x, double s) { return s * x; }
inline Var operator-(const Var& x) { return -1.0 * x; }

inline Var activation(const Var& x, Activation act, int order) {
  Node n;
  n.op = Op::activation;
  n.inputs = {x.id()};
  n.act = act;
  n.order = order;
  return detail::tape_of(x).record(std::move(n));
}

inline Var square(const Var& x) { return detail::record(detail::tape_of(x), Op::square, {x.id()}); }
inline Var sum_all(const Var& x) { return detail::record(detail::tape_of(x), Op::sum_all, {x.id()}); }

inline Var rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ContractError("rows: range out of bounds");
  Node n;
  n.op = Op::rows;
  n.inputs = {x.id()};
  n.a = start;
  n.b = count;
  return detail::tape_of(x).record(std::move(n));
}

inline Var vcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("vcat of nothing");
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    detail::tape_of(parts.front(), p);
    if (p.cols() != parts.front().cols()) throw ContractError("vcat: column mismatch");
    ids.push_back(p.id());
  }
  return detail::record(detail::tape_of(parts.front()), Op::vcat, std::move(ids));
}

inline Var gather_cols(const Var& x, const IndexPtr& idx) {
  for (int j : *idx) {
    if (j < 0 || j >= x.cols()) throw ContractError("gather_cols: index out of range");
  }
  Node n;
  n.op = Op::gather_cols;
  n.inputs = {x.id()};
  n.index = idx;
  return detail::tape_of(x).record(std::move(n));
}

inline Var scatter_cols(const Var& x, const IndexPtr& idx, Eigen::Index ncols) {
  if (static_cast<Eigen::Index>(idx->size()) != x.cols()) throw ContractError("scatter_cols: index size mismatch");
  for (int j : *idx) {
    if (j < 0 || j >= ncols) throw ContractError("scatter_cols: index out of range");
  }
  Node n;
  n.op = Op::scatter_cols;
  n.inputs = {x.id()};
  n.index = idx;
  n.a = ncols;
  return detail::tape_of(x).record(std::move(n));
}

inline Var reshape(const Var& x, Eigen::Index r, Eigen::Index c) {
  if (r * c != x.rows() * x.cols()) throw ContractError("reshape size mismatch");
  Node n;
  n.op = Op::reshape;
  n.inputs = {x.id()};
  n.a = r;
  n.b = c;
  return detail::tape_of(x).record(std::move(n));
}

inline Var constant_like(const Var& like, Matrix value) { return detail::tape_of(like).constant(std::move(value)); }
inline const Matrix& value_of(const Var& x) { return x.value(); }

}  // namespace symplect::diffnet
