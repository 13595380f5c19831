#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "symplect/diffnet/ops.hpp"
#include "symplect/errors.hpp"
#include "symplect/systems.hpp"

namespace symplect {

// ---------------------------------------------------------------------------
// Tableaux

struct ButcherTableau {
  Matrix a;  // s x s
  Vector b;
  Vector c;

  [[nodiscard]] int stages() const { return static_cast<int>(b.size()); }
};

enum class IntegratorId { rk1, rk2, rk3, rk4, vi1, vi2, vi3, vi4_yoshida, vi4_mcate };

inline constexpr std::array<IntegratorId, 9> kAllIntegrators = {
    IntegratorId::rk1, IntegratorId::rk2, IntegratorId::rk3,         IntegratorId::rk4,      IntegratorId::vi1,
    IntegratorId::vi2, IntegratorId::vi3, IntegratorId::vi4_yoshida, IntegratorId::vi4_mcate};

/// The eight integrators of the ablation grid (vi4 means Yoshida).
inline constexpr std::array<IntegratorId, 8> kSweepIntegrators = {
    IntegratorId::rk1, IntegratorId::rk2, IntegratorId::rk3, IntegratorId::rk4,
    IntegratorId::vi1, IntegratorId::vi2, IntegratorId::vi3, IntegratorId::vi4_yoshida};

inline const char* to_string(IntegratorId id) {
  switch (id) {
    case IntegratorId::rk1: return "rk1";
    case IntegratorId::rk2: return "rk2";
    case IntegratorId::rk3: return "rk3";
    case IntegratorId::rk4: return "rk4";
    case IntegratorId::vi1: return "vi1";
    case IntegratorId::vi2: return "vi2";
    case IntegratorId::vi3: return "vi3";
    case IntegratorId::vi4_yoshida: return "vi4_yoshida";
    case IntegratorId::vi4_mcate: return "vi4_mcate";
  }
  return "?";
}

inline IntegratorId integrator_from_string(const std::string& name) {
  if (name == "vi4") return IntegratorId::vi4_yoshida;
  for (auto id : kAllIntegrators) {
    if (name == to_string(id)) return id;
  }
  throw ConfigError("unknown integrator '" + name +
                    "' (expected rk1|rk2|rk3|rk4|vi1|vi2|vi3|vi4|vi4_yoshida|vi4_mcate)");
}

inline bool is_symplectic(IntegratorId id) {
  return id == IntegratorId::vi1 || id == IntegratorId::vi2 || id == IntegratorId::vi3 ||
         id == IntegratorId::vi4_yoshida || id == IntegratorId::vi4_mcate;
}

inline int nominal_order(IntegratorId id) {
  switch (id) {
    case IntegratorId::rk1:
    case IntegratorId::vi1: return 1;
    case IntegratorId::rk2:
    case IntegratorId::vi2: return 2;
    case IntegratorId::rk3:
    case IntegratorId::vi3: return 3;
    default: return 4;
  }
}

inline ButcherTableau rk_tableau(IntegratorId id) {
  ButcherTableau t;
  switch (id) {
    case IntegratorId::rk1:
      t.a = Matrix::Zero(1, 1);
      t.b = Vector::Ones(1);
      break;
    case IntegratorId::rk2:  // explicit midpoint
      t.a = Matrix::Zero(2, 2);
      t.a(1, 0) = 0.5;
      t.b = Vector(2);
      t.b << 0.0, 1.0;
      break;
    case IntegratorId::rk3:  // Kutta's third-order method
      t.a = Matrix::Zero(3, 3);
      t.a(1, 0) = 0.5;
      t.a(2, 0) = -1.0;
      t.a(2, 1) = 2.0;
      t.b = Vector(3);
      t.b << 1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0;
      break;
    case IntegratorId::rk4:
      t.a = Matrix::Zero(4, 4);
      t.a(1, 0) = 0.5;
      t.a(2, 1) = 0.5;
      t.a(3, 2) = 1.0;
      t.b = Vector(4);
      t.b << 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0;
      break;
    default:
      throw ContractError(std::string(to_string(id)) + " is not an explicit Runge-Kutta method");
  }
  t.c = t.a.rowwise().sum();
  return t;
}

/// Paired tableaux for an explicit partitioned method. The position table is
/// lower triangular including its diagonal, the momentum table strictly lower
/// triangular, which makes every stage explicit.
struct PartitionedTableau {
  ButcherTableau q_table;
  ButcherTableau p_table;
  int order = 0;
  IntegratorId name = IntegratorId::vi2;
  std::vector<double> drift;  // a_i
  std::vector<double> kick;   // d_i

  [[nodiscard]] int stages() const { return q_table.stages(); }
};

/// Builds the staggered tableaux from drift coefficients a_i and kick
/// coefficients d_i: Q-row i holds a_1..a_i, P-row i holds d_1..d_{i-1},
/// and the weights are b = a, b_hat = d.
inline PartitionedTableau partitioned_from_coefficients(IntegratorId name, int order, std::vector<double> drift,
                                                        std::vector<double> kick) {
  if (drift.size() != kick.size() || drift.empty()) throw ContractError("drift/kick coefficient count mismatch");
  const auto s = static_cast<Eigen::Index>(drift.size());
  PartitionedTableau t;
  t.name = name;
  t.order = order;
  t.q_table.a = Matrix::Zero(s, s);
  t.p_table.a = Matrix::Zero(s, s);
  t.q_table.b = Vector(s);
  t.p_table.b = Vector(s);
  for (Eigen::Index i = 0; i < s; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) t.q_table.a(i, j) = drift[static_cast<std::size_t>(j)];
    for (Eigen::Index j = 0; j < i; ++j) t.p_table.a(i, j) = kick[static_cast<std::size_t>(j)];
    t.q_table.b(i) = drift[static_cast<std::size_t>(i)];
    t.p_table.b(i) = kick[static_cast<std::size_t>(i)];
  }
  t.q_table.c = t.q_table.a.rowwise().sum();
  t.p_table.c = t.p_table.a.rowwise().sum();
  t.drift = std::move(drift);
  t.kick = std::move(kick);
  return t;
}

namespace coefficients {

inline double yoshida_w1() { return 1.0 / (2.0 - std::cbrt(2.0)); }
inline double yoshida_w0() { return -std::cbrt(2.0) / (2.0 - std::cbrt(2.0)); }

// McLachlan-Atela fourth order, as tabulated (d = kick, a = drift).
inline constexpr std::array<double, 4> kMcAteKick = {0.515352837431122936, -0.085782019412973646,
                                                     0.441583023616466524, 0.128846158365384185};
inline constexpr std::array<double, 4> kMcAteDrift = {0.134496199277431089, -0.224819803079420806,
                                                      0.756320000515668291, 0.334003603286321425};
inline constexpr std::array<const char*, 4> kMcAteKickDigits = {"0.515352837431122936", "-0.085782019412973646",
                                                               "0.441583023616466524", "0.128846158365384185"};
inline constexpr std::array<const char*, 4> kMcAteDriftDigits = {"0.134496199277431089", "-0.224819803079420806",
                                                                "0.756320000515668291", "0.334003603286321425"};

}  // namespace coefficients

inline PartitionedTableau prk_tableau(IntegratorId id) {
  switch (id) {
    case IntegratorId::vi1:  // symplectic Euler, momentum first
      return partitioned_from_coefficients(id, 1, {0.0, 1.0}, {1.0, 0.0});
    case IntegratorId::vi2:  // Stormer-Verlet: half kick, drift, half kick
      return partitioned_from_coefficients(id, 2, {0.0, 1.0}, {0.5, 0.5});
    case IntegratorId::vi3:  // Ruth
      return partitioned_from_coefficients(id, 3, {1.0, -2.0 / 3.0, 2.0 / 3.0}, {-1.0 / 24.0, 0.75, 7.0 / 24.0});
    case IntegratorId::vi4_yoshida: {
      const double w1 = coefficients::yoshida_w1();
      const double w0 = coefficients::yoshida_w0();
      return partitioned_from_coefficients(id, 4, {w1 / 2.0, (w0 + w1) / 2.0, (w0 + w1) / 2.0, w1 / 2.0},
                                           {w1, w0, w1, 0.0});
    }
    case IntegratorId::vi4_mcate:
      return partitioned_from_coefficients(
          id, 4, {coefficients::kMcAteDrift.begin(), coefficients::kMcAteDrift.end()},
          {coefficients::kMcAteKick.begin(), coefficients::kMcAteKick.end()});
    default:
      throw ContractError(std::string(to_string(id)) + " is not a partitioned method");
  }
}

// ---------------------------------------------------------------------------
// Generic steps. `V` is a column-batched carrier (Matrix or diffnet::Var).

namespace detail {

template <class V>
void check_stage(const V& x, int stage, bool enabled) {
  if (enabled && !diffnet::value_of(x).allFinite()) throw DivergenceError("non-finite stage value", stage);
}

/// base + h * sum_j coeff_j * terms_j, skipping zero coefficients.
template <class V>
V axpy_sum(const V& base, double h, const std::vector<double>& coeff, const std::vector<std::optional<V>>& terms) {
  V out = base;
  for (std::size_t j = 0; j < coeff.size(); ++j) {
    if (coeff[j] == 0.0) continue;
    if (!terms[j]) throw ContractError("stage derivative requested before evaluation");
    out = out + (h * coeff[j]) * *terms[j];
  }
  return out;
}

inline std::vector<double> row(const Matrix& a, Eigen::Index i, Eigen::Index count) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (Eigen::Index j = 0; j < count; ++j) out[static_cast<std::size_t>(j)] = a(i, j);
  return out;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

/// Explicit Runge-Kutta step on the concatenated state. `field(q, p)` returns
/// the pair (dq/dt, dp/dt).
template <class V, class Field>
std::pair<V, V> rk_step(const ButcherTableau& tab, Field&& field, const V& q, const V& p, double h,
                        bool check_finite = true) {
  const int s = tab.stages();
  std::vector<std::optional<V>> kq(static_cast<std::size_t>(s));
  std::vector<std::optional<V>> kp(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    const auto coeff = detail::row(tab.a, i, i);
    V qi = detail::axpy_sum(q, h, coeff, kq);
    V pi = detail::axpy_sum(p, h, coeff, kp);
    auto [dq, dp] = field(qi, pi);
    detail::check_stage(dq, i, check_finite);
    detail::check_stage(dp, i, check_finite);
    kq[static_cast<std::size_t>(i)] = std::move(dq);
    kp[static_cast<std::size_t>(i)] = std::move(dp);
  }
  const auto b = detail::to_std(tab.b);
  return {detail::axpy_sum(q, h, b, kq), detail::axpy_sum(p, h, b, kp)};
}

/// Explicit partitioned step. Stage i computes P_i from earlier momentum
/// rates, Qdot_i = q_rate(Q_{i-1}, P_i), Q_i from position rates up to i, and
/// Pdot_i = p_rate(Q_i, P_i). For separable systems q_rate ignores its first
/// argument and p_rate its second, giving the textbook PRK update; for
/// non-separable fields this is a staggered evaluation rule.
template <class V, class QRate, class PRate>
std::pair<V, V> prk_step(const PartitionedTableau& tab, QRate&& q_rate, PRate&& p_rate, const V& q, const V& p,
                         double h, bool check_finite = true) {
  const int s = tab.stages();
  const Matrix& a = tab.q_table.a;
  const Matrix& ahat = tab.p_table.a;
  const Vector& b = tab.q_table.b;
  const Vector& bhat = tab.p_table.b;

  auto q_rate_needed = [&](int i) {
    if (b(i) != 0.0) return true;
    for (int k = i; k < s; ++k) {
      if (a(k, i) != 0.0) return true;
    }
    return false;
  };
  auto p_rate_needed = [&](int i) {
    if (bhat(i) != 0.0) return true;
    for (int k = i + 1; k < s; ++k) {
      if (ahat(k, i) != 0.0) return true;
    }
    return false;
  };

  std::vector<std::optional<V>> qdot(static_cast<std::size_t>(s));
  std::vector<std::optional<V>> pdot(static_cast<std::size_t>(s));
  V q_prev = q;
  for (int i = 0; i < s; ++i) {
    V p_i = detail::axpy_sum(p, h, detail::row(ahat, i, i), pdot);
    if (q_rate_needed(i)) {
      V r = q_rate(q_prev, p_i);
      detail::check_stage(r, i, check_finite);
      qdot[static_cast<std::size_t>(i)] = std::move(r);
    }
    V q_i = detail::axpy_sum(q, h, detail::row(a, i, i + 1), qdot);
    if (p_rate_needed(i)) {
      V r = p_rate(q_i, p_i);
      detail::check_stage(r, i, check_finite);
      pdot[static_cast<std::size_t>(i)] = std::move(r);
    }
    q_prev = std::move(q_i);
  }
  return {detail::axpy_sum(q, h, detail::to_std(b), qdot), detail::axpy_sum(p, h, detail::to_std(bhat), pdot)};
}

/// Anything that exposes the full field and the two partial rates.
template <class F, class V>
concept PhaseField = requires(const F& f, const V& q, const V& p) {
  { f.field(q, p) };
  { f.q_rate(q, p) };
  { f.p_rate(q, p) };
};

/// One step of integrator `id` through a PhaseField.
template <class V, class F>
  requires PhaseField<F, V>
std::pair<V, V> integrate_step(IntegratorId id, const F& f, const V& q, const V& p, double h,
                               bool check_finite = true) {
  if (is_symplectic(id)) {
    const auto tab = prk_tableau(id);
    return prk_step(
        tab, [&f](const V& qq, const V& pp) { return f.q_rate(qq, pp); },
        [&f](const V& qq, const V& pp) { return f.p_rate(qq, pp); }, q, p, h, check_finite);
  }
  const auto tab = rk_tableau(id);
  return rk_step(tab, [&f](const V& qq, const V& pp) { return f.field(qq, pp); }, q, p, h, check_finite);
}

/// Exact field of an analytic system over column batches.
struct AnalyticField {
  SystemSpec spec;

  [[nodiscard]] std::pair<Matrix, Matrix> field(const Matrix& q, const Matrix& p) const {
    return vector_field_batch(spec, q, p);
  }
  [[nodiscard]] Matrix q_rate(const Matrix&, const Matrix& p) const {
    return mass_inverse(spec).asDiagonal() * p;
  }
  [[nodiscard]] Matrix p_rate(const Matrix& q, const Matrix&) const { return -potential_batch(spec, q).second; }
};

// ---------------------------------------------------------------------------
// Single-state API

using Stepper = std::function<PhaseState(const PhaseState&, double)>;

inline PhaseState with_coordinates(const PhaseState& like, Vector q, Vector p) {
  PhaseState out = like;
  out.q = std::move(q);
  out.p = std::move(p);
  return out;
}

inline Stepper make_stepper(IntegratorId id, const SystemSpec& spec) {
  return [id, field = AnalyticField{spec}](const PhaseState& s, double h) {
    auto [q, p] = integrate_step<Matrix>(id, field, Matrix(s.q), Matrix(s.p), h);
    return with_coordinates(s, q.col(0), p.col(0));
  };
}

struct Trajectory {
  std::vector<double> t;
  std::vector<PhaseState> states;
  double h = 0.0;
  SystemKind system = SystemKind::mass_spring;
  bool noisy = false;
  bool diverged = false;

  [[nodiscard]] std::size_t size() const { return states.size(); }
};

inline constexpr double kDivergenceMagnitude = 1e8;

inline bool diverged_state(const PhaseState& s) {
  if (!s.finite()) return true;
  return s.q.cwiseAbs().maxCoeff() > kDivergenceMagnitude || s.p.cwiseAbs().maxCoeff() > kDivergenceMagnitude;
}

/// n steps from s0. A non-finite or oversized state ends the rollout early
/// with `diverged` set; the offending state is not stored.
inline Trajectory rollout(const Stepper& stepper, const PhaseState& s0, double h, int n) {
  if (n < 1) throw ContractError("rollout needs at least one step");
  Trajectory tr;
  tr.h = h;
  tr.t.push_back(0.0);
  tr.states.push_back(s0);
  PhaseState cur = s0;
  for (int k = 1; k <= n; ++k) {
    PhaseState next;
    try {
      next = stepper(cur, h);
    } catch (const DivergenceError&) {
      tr.diverged = true;
      break;
    } catch (const SingularityError&) {
      tr.diverged = true;
      break;
    }
    if (diverged_state(next)) {
      tr.diverged = true;
      break;
    }
    tr.t.push_back(k * h);
    tr.states.push_back(next);
    cur = std::move(next);
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Reference trajectories

inline constexpr double kGroundTruthEnergyDrift = 1e-10;
inline constexpr double kGroundTruthRefinementTol = 1e-10;
inline constexpr int kGroundTruthMaxRefinements = 14;

namespace detail {

inline std::vector<PhaseState> rk4_on_grid(const SystemSpec& spec, const PhaseState& s0, double h_out, int n_out,
                                           int substeps) {
  const auto tab = rk_tableau(IntegratorId::rk4);
  const AnalyticField f{spec};
  const double h = h_out / substeps;
  std::vector<PhaseState> out;
  out.reserve(static_cast<std::size_t>(n_out) + 1);
  out.push_back(s0);
  Matrix q = s0.q;
  Matrix p = s0.p;
  for (int k = 0; k < n_out; ++k) {
    for (int j = 0; j < substeps; ++j) {
      std::tie(q, p) = rk_step(tab, [&f](const Matrix& a, const Matrix& b) { return f.field(a, b); }, q, p, h);
    }
    out.push_back(with_coordinates(s0, q.col(0), p.col(0)));
  }
  return out;
}

inline double max_relative_drift(const SystemSpec& spec, const std::vector<PhaseState>& states) {
  const double h0 = energy(spec, states.front());
  const double scale = std::max(std::abs(h0), 1e-12);
  double worst = 0.0;
  for (const auto& s : states) worst = std::max(worst, std::abs(energy(spec, s) - h0) / scale);
  return worst;
}

}  // namespace detail

/// High-accuracy trajectory sampled every h_out up to T. Classic RK4 with
/// substeps doubled until the energy drift stays below 1e-10 (relative) and
/// two successive refinements agree to 1e-10.
inline Trajectory ground_truth(const SystemSpec& spec, const PhaseState& s0, double h_out, double T) {
  if (!(h_out > 0) || !(T > 0)) throw ContractError("ground_truth needs positive h_out and T");
  const double ratio = T / h_out;
  const int n_out = static_cast<int>(std::llround(ratio));
  if (std::abs(ratio - n_out) > 1e-9 * std::max(1.0, ratio)) throw ContractError("T must be a multiple of h_out");

  std::vector<PhaseState> prev;
  for (int level = 0, substeps = 1; level <= kGroundTruthMaxRefinements; ++level, substeps *= 2) {
    auto states = detail::rk4_on_grid(spec, s0, h_out, n_out, substeps);
    const double drift = detail::max_relative_drift(spec, states);
    double change = std::numeric_limits<double>::infinity();
    if (!prev.empty()) {
      change = 0.0;
      for (std::size_t k = 0; k < states.size(); ++k) {
        change = std::max(change, (states[k].q - prev[k].q).cwiseAbs().maxCoeff());
        change = std::max(change, (states[k].p - prev[k].p).cwiseAbs().maxCoeff());
      }
    }
    if (drift < kGroundTruthEnergyDrift && change < kGroundTruthRefinementTol) {
      Trajectory tr;
      tr.h = h_out;
      tr.system = spec.kind;
      tr.states = std::move(states);
      for (int k = 0; k <= n_out; ++k) tr.t.push_back(k * h_out);
      return tr;
    }
    prev = std::move(states);
  }
  throw PrecisionError(std::string("ground truth for ") + to_string(spec.kind) +
                       " did not reach tolerance within the substep budget");
}

// ---------------------------------------------------------------------------
// Symplecticity diagnostic

/// max |J^T Omega J - Omega| for the one-step map at s, J by central
/// differences with step 1e-6.
inline double two_form_defect(const Stepper& stepper, const PhaseState& s, double h) {
  const auto n = static_cast<Eigen::Index>(s.size());
  constexpr double eps = 1e-6;
  Matrix J(2 * n, 2 * n);
  auto flat = [n](const PhaseState& x) {
    Vector v(2 * n);
    v << x.q, x.p;
    return v;
  };
  for (Eigen::Index k = 0; k < 2 * n; ++k) {
    PhaseState plus = s;
    PhaseState minus = s;
    if (k < n) {
      plus.q(k) += eps;
      minus.q(k) -= eps;
    } else {
      plus.p(k - n) += eps;
      minus.p(k - n) -= eps;
    }
    J.col(k) = (flat(stepper(plus, h)) - flat(stepper(minus, h))) / (2.0 * eps);
  }
  Matrix omega = Matrix::Zero(2 * n, 2 * n);
  omega.topRightCorner(n, n) = Matrix::Identity(n, n);
  omega.bottomLeftCorner(n, n) = -Matrix::Identity(n, n);
  return (J.transpose() * omega * J - omega).cwiseAbs().maxCoeff();
}

}  // namespace symplect
