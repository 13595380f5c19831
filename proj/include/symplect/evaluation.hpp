#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "symplect/errors.hpp"
#include "symplect/integrators.hpp"
#include "symplect/models.hpp"
#include "symplect/systems.hpp"

namespace symplect::evaluation {

using models::ModelSpec;

inline constexpr double kMetricFloor = 1e-12;
inline constexpr double kDivergedMse = 1e6;
inline constexpr int kDefaultIcs = 50;
inline constexpr double kDefaultHorizonMult = 3.0;

struct Metrics {
  std::vector<double> per_ic_state_mse;
  std::vector<double> per_ic_energy_mse;
  std::vector<double> per_ic_learned_energy_mse;  // empty for baseline models
  double geo_state = 0.0;
  double geo_energy = 0.0;
  double geo_learned_energy = std::numeric_limits<double>::quiet_NaN();
  double se_log_state = 0.0;
  double se_log_energy = 0.0;
  int diverged_count = 0;
  int n_ics = 0;
  int steps = 0;
};

/// exp(mean(log(max(v, 1e-12)))).
inline double geometric_mean(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("geometric mean of an empty list");
  double s = 0.0;
  for (double v : values) s += std::log(std::max(v, kMetricFloor));
  return std::exp(s / static_cast<double>(values.size()));
}

/// Standard error of the mean of log(max(v, 1e-12)).
inline double std_error_log(const std::vector<double>& values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  std::vector<double> logs;
  logs.reserve(n);
  for (double v : values) logs.push_back(std::log(std::max(v, kMetricFloor)));
  double mean = 0.0;
  for (double x : logs) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : logs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n - 1);
  return std::sqrt(var / static_cast<double>(n));
}

/// Batched value-mode rollout of B initial conditions. Columns that leave the
/// finite range (or exceed 1e8) are frozen at their last good state and
/// flagged; the other columns continue unaffected.
struct BatchRollout {
  std::vector<Matrix> q;  // steps+1 entries, n x B
  std::vector<Matrix> p;
  std::vector<bool> diverged;
  std::vector<int> diverged_at;  // first bad step, or -1
};

namespace detail {

inline bool column_ok(const Matrix& q, const Matrix& p, Eigen::Index j) {
  return q.col(j).allFinite() && p.col(j).allFinite() && q.col(j).cwiseAbs().maxCoeff() <= kDivergenceMagnitude &&
         p.col(j).cwiseAbs().maxCoeff() <= kDivergenceMagnitude;
}

template <class F>
std::pair<Matrix, Matrix> guarded_step(IntegratorId id, const F& f, const Matrix& q, const Matrix& p, double h,
                                       std::vector<bool>& bad) {
  try {
    return integrate_step<Matrix>(id, f, q, p, h, false);
  } catch (const SingularityError&) {
    // Step columns one at a time so a single collision does not stop the rest.
    Matrix q1 = q;
    Matrix p1 = p;
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
      if (bad[static_cast<std::size_t>(j)]) continue;
      try {
        auto [a, b] = integrate_step<Matrix>(id, f, Matrix(q.col(j)), Matrix(p.col(j)), h, false);
        q1.col(j) = a;
        p1.col(j) = b;
      } catch (const SingularityError&) {
        bad[static_cast<std::size_t>(j)] = true;
      }
    }
    return {q1, p1};
  }
}

}  // namespace detail

template <class F>
BatchRollout rollout_batch(IntegratorId id, const F& field, const Matrix& q0, const Matrix& p0, double h, int steps) {
  const auto b = static_cast<std::size_t>(q0.cols());
  BatchRollout r;
  r.diverged.assign(b, false);
  r.diverged_at.assign(b, -1);
  r.q.push_back(q0);
  r.p.push_back(p0);
  Matrix q = q0;
  Matrix p = p0;
  for (int k = 1; k <= steps; ++k) {
    std::vector<bool> bad = r.diverged;
    auto [q1, p1] = detail::guarded_step(id, field, q, p, h, bad);
    for (std::size_t j = 0; j < b; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      if (r.diverged[j]) {
        q1.col(c) = q.col(c);
        p1.col(c) = p.col(c);
        continue;
      }
      if (bad[j] || !detail::column_ok(q1, p1, c)) {
        r.diverged[j] = true;
        r.diverged_at[j] = k;
        q1.col(c) = q.col(c);
        p1.col(c) = p.col(c);
      }
    }
    q = std::move(q1);
    p = std::move(p1);
    r.q.push_back(q);
    r.p.push_back(p);
  }
  return r;
}

/// Test initial conditions drawn from the training sampler.
inline std::vector<PhaseState> test_initial_conditions(const SystemSpec& spec, int n_ics, std::uint64_t seed) {
  if (n_ics < 1) throw ContractError("need at least one initial condition");
  Rng rng(seed);
  std::vector<PhaseState> out;
  for (int i = 0; i < n_ics; ++i) out.push_back(sample_initial(spec, rng));
  return out;
}

/// Metrics of `model` stepped by `id` from explicit initial conditions, against
/// ground truth over `steps` steps of size h. Per-IC MSEs average over steps
/// 1..steps and every coordinate.
inline Metrics evaluate_on(const ModelSpec& model, IntegratorId id, const SystemSpec& spec,
                           const std::vector<PhaseState>& ics, double h, int steps) {
  if (ics.empty()) throw ContractError("need at least one initial condition");
  if (steps < 1) throw ContractError("need at least one step");
  const auto n = static_cast<Eigen::Index>(spec.size());
  const auto b = static_cast<Eigen::Index>(ics.size());
  Matrix q0(n, b);
  Matrix p0(n, b);
  std::vector<std::optional<Trajectory>> truth;
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto& s = ics[static_cast<std::size_t>(j)];
    q0.col(j) = s.q;
    p0.col(j) = s.p;
    try {
      truth.emplace_back(ground_truth(spec, s, h, h * steps));
    } catch (const Error&) {
      // No reference trajectory (collision or precision failure): scored as diverged.
      truth.emplace_back(std::nullopt);
    }
  }
  const models::ModelField<Matrix> field(models::view(model));
  const auto roll = rollout_batch(id, field, q0, p0, h, steps);
  const bool learned_energy = model.family != models::Family::baseline;

  Metrics m;
  m.n_ics = static_cast<int>(b);
  m.steps = steps;
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    double se = 0.0;
    double ee = 0.0;
    double le = 0.0;
    bool bad = roll.diverged[jj] || !truth[jj];
    double learned0 = 0.0;
    if (learned_energy && !bad) learned0 = field.energy(q0.col(j), p0.col(j))(0, 0);
    for (int k = 1; k <= steps && !bad; ++k) {
      const auto& t = truth[jj]->states[static_cast<std::size_t>(k)];
      const Vector qk = roll.q[static_cast<std::size_t>(k)].col(j);
      const Vector pk = roll.p[static_cast<std::size_t>(k)].col(j);
      se += ((qk - t.q).squaredNorm() + (pk - t.p).squaredNorm()) / static_cast<double>(2 * n);
      try {
        const double dh = energy(spec, with_coordinates(t, qk, pk)) - energy(spec, t);
        ee += dh * dh;
      } catch (const SingularityError&) {
        bad = true;
      }
      if (learned_energy) {
        const double dl = field.energy(Matrix(qk), Matrix(pk))(0, 0) - learned0;
        le += dl * dl;
      }
    }
    se /= steps;
    ee /= steps;
    le /= steps;
    if (bad || !std::isfinite(se) || !std::isfinite(ee)) {
      ++m.diverged_count;
      se = kDivergedMse;
      ee = kDivergedMse;
      le = kDivergedMse;
    }
    m.per_ic_state_mse.push_back(std::min(se, kDivergedMse));
    m.per_ic_energy_mse.push_back(std::min(ee, kDivergedMse));
    if (learned_energy) m.per_ic_learned_energy_mse.push_back(std::isfinite(le) ? std::min(le, kDivergedMse) : kDivergedMse);
  }
  m.geo_state = geometric_mean(m.per_ic_state_mse);
  m.geo_energy = geometric_mean(m.per_ic_energy_mse);
  m.se_log_state = std_error_log(m.per_ic_state_mse);
  m.se_log_energy = std_error_log(m.per_ic_energy_mse);
  if (learned_energy) m.geo_learned_energy = geometric_mean(m.per_ic_learned_energy_mse);
  return m;
}

/// Test protocol: n_ics fresh initial conditions, rollouts to
/// horizon_mult * t_max, geometric-mean aggregation.
inline Metrics evaluate_model(const ModelSpec& model, IntegratorId id, const SystemSpec& spec, int n_ics,
                              double horizon_mult, double h, double t_max, std::uint64_t seed) {
  if (!(h > 0) || !(t_max > 0) || !(horizon_mult > 0)) throw ContractError("bad evaluation horizon");
  const double ratio = horizon_mult * t_max / h;
  const int steps = static_cast<int>(std::llround(ratio));
  if (std::abs(ratio - steps) > 1e-9 * std::max(1.0, ratio)) {
    throw ContractError("evaluation horizon must be a multiple of h");
  }
  return evaluate_on(model, id, spec, test_initial_conditions(spec, n_ics, seed), h, steps);
}

}  // namespace symplect::evaluation
