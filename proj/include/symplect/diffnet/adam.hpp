#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "symplect/diffnet/net.hpp"
#include "symplect/errors.hpp"

namespace symplect::diffnet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  NetParams first;   // moment estimates, shaped like the parameters
  NetParams second;
  std::uint64_t step = 0;
  AdamConfig config;
};

inline AdamState adam_init(const NetParams& p, AdamConfig config = {}) {
  return {zeros_like(p), zeros_like(p), 0, config};
}

namespace detail {

inline bool same_shape(const NetParams& a, const NetParams& b) {
  if (a.layers() != b.layers()) return false;
  for (std::size_t k = 0; k < a.layers(); ++k) {
    if (a.weights[k].rows() != b.weights[k].rows() || a.weights[k].cols() != b.weights[k].cols()) return false;
    if (a.biases[k].rows() != b.biases[k].rows() || a.biases[k].cols() != b.biases[k].cols()) return false;
  }
  return true;
}

inline void adam_update(Matrix& x, const Matrix& g, Matrix& m, Matrix& v, const AdamConfig& c, double corr1,
                        double corr2) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  x.array() -= c.lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + c.eps);
}

}  // namespace detail

/// Bias-corrected Adam update. Returns the new parameters and state; the
/// inputs are left untouched.
inline std::pair<NetParams, AdamState> adam_step(const NetParams& params, const NetParams& grads, AdamState state) {
  if (!detail::same_shape(params, grads) || !detail::same_shape(params, state.first) ||
      !detail::same_shape(params, state.second)) {
    throw ContractError("adam_step: parameter, gradient and moment shapes differ");
  }
  for (std::size_t k = 0; k < grads.layers(); ++k) {
    if (!grads.weights[k].allFinite() || !grads.biases[k].allFinite()) {
      throw TrainingError("non-finite gradient", static_cast<int>(k));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  NetParams out = params;
  for (std::size_t k = 0; k < out.layers(); ++k) {
    detail::adam_update(out.weights[k], grads.weights[k], state.first.weights[k], state.second.weights[k], c, corr1,
                        corr2);
    detail::adam_update(out.biases[k], grads.biases[k], state.first.biases[k], state.second.biases[k], c, corr1,
                        corr2);
  }
  return {std::move(out), std::move(state)};
}

}  // namespace symplect::diffnet
