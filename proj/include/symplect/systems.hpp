#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "symplect/errors.hpp"

namespace symplect {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

enum class Convention { canonical_qp, generalized_qv };

/// Flattened phase-space point: body-major, q = [q_0,x, q_0,y, q_1,x, ...].
struct PhaseState {
  Vector q;
  Vector p;
  int n_bodies = 1;
  int dim = 1;
  Convention convention = Convention::canonical_qp;

  [[nodiscard]] int size() const { return n_bodies * dim; }
  [[nodiscard]] bool finite() const { return q.allFinite() && p.allFinite(); }
};

inline PhaseState make_state(Vector q, Vector p, int n_bodies, int dim) {
  if (q.size() != n_bodies * dim || p.size() != n_bodies * dim) {
    throw ContractError("phase state size does not match bodies x dim");
  }
  return {std::move(q), std::move(p), n_bodies, dim, Convention::canonical_qp};
}

enum class SystemKind { mass_spring, pendulum, two_body_grav, three_body_grav, n_body_spring, henon_heiles };

inline constexpr std::array<SystemKind, 6> kAllSystems = {SystemKind::mass_spring,     SystemKind::pendulum,
                                                          SystemKind::two_body_grav,   SystemKind::three_body_grav,
                                                          SystemKind::n_body_spring,   SystemKind::henon_heiles};

inline const char* to_string(SystemKind k) {
  switch (k) {
    case SystemKind::mass_spring: return "mass_spring";
    case SystemKind::pendulum: return "pendulum";
    case SystemKind::two_body_grav: return "two_body_grav";
    case SystemKind::three_body_grav: return "three_body_grav";
    case SystemKind::n_body_spring: return "n_body_spring";
    case SystemKind::henon_heiles: return "henon_heiles";
  }
  return "?";
}

inline SystemKind system_from_string(const std::string& name) {
  for (auto k : kAllSystems) {
    if (name == to_string(k)) return k;
  }
  throw ConfigError("unknown system '" + name +
                    "' (expected mass_spring|pendulum|two_body_grav|three_body_grav|n_body_spring|henon_heiles)");
}

struct SystemConstants {
  double m = 1.0;       // every body's mass
  double k = 1.0;       // mass-spring stiffness
  double g = 1.0;       // gravitational acceleration (pendulum) or constant (gravity)
  double l = 1.0;       // pendulum length
  double lambda = 1.0;  // Henon-Heiles coupling
  double grav_exponent = 1.0;
  std::vector<double> spring_k;  // per-body constants of the N-body spring system

  friend bool operator==(const SystemConstants&, const SystemConstants&) = default;
};

struct SystemSpec {
  SystemKind kind = SystemKind::mass_spring;
  SystemConstants constants;
  int n_bodies = 1;
  int dim = 1;

  [[nodiscard]] int size() const { return n_bodies * dim; }
  friend bool operator==(const SystemSpec&, const SystemSpec&) = default;
};

inline constexpr double kSingularityGuard = 1e-9;

/// Catalog defaults. `seed` only matters for the N-body spring constants,
/// drawn uniformly from [0.5, 1.5].
inline SystemSpec make_system(SystemKind kind, std::uint64_t seed = 0, int n_spring_bodies = 5) {
  SystemSpec s;
  s.kind = kind;
  switch (kind) {
    case SystemKind::mass_spring:
      break;
    case SystemKind::pendulum:
      s.constants.g = 9.81;
      break;
    case SystemKind::two_body_grav:
      s.n_bodies = 2;
      s.dim = 2;
      break;
    case SystemKind::three_body_grav:
      s.n_bodies = 3;
      s.dim = 2;
      break;
    case SystemKind::n_body_spring: {
      if (n_spring_bodies < 2) throw ConfigError("n_body_spring needs at least two bodies");
      s.n_bodies = n_spring_bodies;
      s.dim = 2;
      Rng rng(seed);
      std::uniform_real_distribution<double> uk(0.5, 1.5);
      for (int i = 0; i < n_spring_bodies; ++i) s.constants.spring_k.push_back(uk(rng));
      break;
    }
    case SystemKind::henon_heiles:
      s.dim = 2;
      break;
  }
  return s;
}

inline void validate(const SystemSpec& s) {
  const auto& c = s.constants;
  if (s.n_bodies < 1 || s.dim < 1) throw ConfigError("system needs at least one body and one dimension");
  if (!(c.m > 0 && c.k > 0 && c.g > 0 && c.l > 0 && c.lambda > 0 && c.grav_exponent > 0)) {
    throw ConfigError("system constants must be positive");
  }
  if (s.kind == SystemKind::n_body_spring) {
    if (static_cast<int>(c.spring_k.size()) != s.n_bodies) throw ConfigError("need one spring constant per body");
    for (double k : c.spring_k) {
      if (!(k > 0)) throw ConfigError("spring constants must be positive");
    }
  }
}

/// Diagonal of M^-1 over the flattened coordinates.
inline Vector mass_inverse(const SystemSpec& s) {
  const auto& c = s.constants;
  const double inv = s.kind == SystemKind::pendulum ? 1.0 / (c.m * c.l * c.l) : 1.0 / c.m;
  return Vector::Constant(s.size(), inv);
}

/// Per-body static attributes a graph network may use as node features.
inline Matrix node_constants(const SystemSpec& s) {
  if (s.kind != SystemKind::n_body_spring) return Matrix(0, s.n_bodies);
  Matrix out(1, s.n_bodies);
  for (int i = 0; i < s.n_bodies; ++i) out(0, i) = s.constants.spring_k[static_cast<std::size_t>(i)];
  return out;
}

namespace detail {

inline void check_dims(const SystemSpec& s, Eigen::Index n) {
  if (n != s.size()) {
    throw ContractError(std::string("state has ") + std::to_string(n) + " coordinates, " + to_string(s.kind) +
                        " expects " + std::to_string(s.size()));
  }
}

inline std::pair<double, Vector> gravity(const SystemSpec& s, const Vector& q) {
  const auto& c = s.constants;
  const int n = s.n_bodies;
  const int d = s.dim;
  double v = 0.0;
  Vector grad = Vector::Zero(q.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Vector diff = q.segment(j * d, d) - q.segment(i * d, d);
      const double r = diff.norm();
      if (r < kSingularityGuard) throw SingularityError("bodies " + std::to_string(i) + " and " + std::to_string(j) +
                                                        " coincide");
      const double strength = c.g * c.m * c.m;
      v -= strength / std::pow(r, c.grav_exponent);
      // dV/dq_j = e * strength * r^-(e+2) * (q_j - q_i)
      const Vector dj = c.grav_exponent * strength / std::pow(r, c.grav_exponent + 2.0) * diff;
      grad.segment(j * d, d) += dj;
      grad.segment(i * d, d) -= dj;
    }
  }
  return {v, grad};
}

inline std::pair<double, Vector> springs(const SystemSpec& s, const Vector& q) {
  const auto& k = s.constants.spring_k;
  const int n = s.n_bodies;
  const int d = s.dim;
  double v = 0.0;
  Vector grad = Vector::Zero(q.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double kij = k[static_cast<std::size_t>(i)] * k[static_cast<std::size_t>(j)];
      const Vector diff = q.segment(i * d, d) - q.segment(j * d, d);
      v += 0.5 * kij * diff.squaredNorm();
      grad.segment(i * d, d) += kij * diff;
      grad.segment(j * d, d) -= kij * diff;
    }
  }
  return {v, grad};
}

}  // namespace detail

/// Potential energy and its gradient with respect to q.
inline std::pair<double, Vector> potential_and_gradient(const SystemSpec& s, const Vector& q) {
  detail::check_dims(s, q.size());
  const auto& c = s.constants;
  switch (s.kind) {
    case SystemKind::mass_spring: {
      Vector g(1);
      g(0) = c.k * q(0);
      return {0.5 * c.k * q(0) * q(0), g};
    }
    case SystemKind::pendulum: {
      const double mgl = c.m * c.g * c.l;
      Vector g(1);
      g(0) = mgl * std::sin(q(0));
      return {mgl * (1.0 - std::cos(q(0))), g};
    }
    case SystemKind::two_body_grav:
    case SystemKind::three_body_grav:
      return detail::gravity(s, q);
    case SystemKind::n_body_spring:
      return detail::springs(s, q);
    case SystemKind::henon_heiles: {
      const double x = q(0);
      const double y = q(1);
      Vector g(2);
      g(0) = x + 2.0 * c.lambda * x * y;
      g(1) = y + c.lambda * (x * x - y * y);
      return {0.5 * (x * x + y * y) + c.lambda * (x * x * y - y * y * y / 3.0), g};
    }
  }
  throw ContractError("unknown system");
}

inline double kinetic_energy(const SystemSpec& s, const Vector& p) {
  detail::check_dims(s, p.size());
  return 0.5 * p.cwiseProduct(p).dot(mass_inverse(s));
}

inline double energy(const SystemSpec& s, const PhaseState& x) {
  detail::check_dims(s, x.q.size());
  return kinetic_energy(s, x.p) + potential_and_gradient(s, x.q).first;
}

/// Exact Hamiltonian vector field (dq/dt, dp/dt) = (dH/dp, -dH/dq).
inline std::pair<Vector, Vector> vector_field(const SystemSpec& s, const Vector& q, const Vector& p) {
  detail::check_dims(s, p.size());
  auto [v, grad] = potential_and_gradient(s, q);
  return {mass_inverse(s).cwiseProduct(p), -grad};
}

inline std::pair<Vector, Vector> vector_field(const SystemSpec& s, const PhaseState& x) {
  return vector_field(s, x.q, x.p);
}

/// Column-wise field for a batch of states (columns are samples).
inline std::pair<Matrix, Matrix> vector_field_batch(const SystemSpec& s, const Matrix& q, const Matrix& p) {
  Matrix dq(q.rows(), q.cols());
  Matrix dp(p.rows(), p.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    auto [a, b] = vector_field(s, Vector(q.col(j)), Vector(p.col(j)));
    dq.col(j) = a;
    dp.col(j) = b;
  }
  return {dq, dp};
}

/// Column-wise potential energy (1 x B) and gradient.
inline std::pair<Matrix, Matrix> potential_batch(const SystemSpec& s, const Matrix& q) {
  Matrix v(1, q.cols());
  Matrix g(q.rows(), q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    auto [e, grad] = potential_and_gradient(s, Vector(q.col(j)));
    v(0, j) = e;
    g.col(j) = grad;
  }
  return {v, g};
}

// ---------------------------------------------------------------------------
// Initial conditions.

inline constexpr int kSamplerBudget = 10000;

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// Speed of a body on a circular orbit of radius r when the net central
/// force on it is `force`.
inline double circular_speed(double force, double r, double m) { return std::sqrt(force * r / m); }

inline bool accept(const SystemSpec& s, const PhaseState& x) {
  const auto& c = s.constants;
  switch (s.kind) {
    case SystemKind::mass_spring: {
      const double e = energy(s, x);
      return e >= 0.5 && e <= 4.5;
    }
    case SystemKind::pendulum: {
      const double e = energy(s, x);
      return e >= 1.3 && e <= 2.3;
    }
    case SystemKind::two_body_grav:
      for (int i = 0; i < 2; ++i) {
        const double r = x.q.segment(i * s.dim, s.dim).norm();
        if (r < 0.5 || r > 1.5) return false;
      }
      return true;
    case SystemKind::three_body_grav:
      for (int i = 0; i < s.n_bodies; ++i) {
        for (int j = i + 1; j < s.n_bodies; ++j) {
          if ((x.q.segment(i * s.dim, s.dim) - x.q.segment(j * s.dim, s.dim)).norm() < 0.2) return false;
        }
      }
      return true;
    case SystemKind::n_body_spring:
      return true;
    case SystemKind::henon_heiles: {
      // Inside the triangle bounded by the three escape saddles.
      const double xx = x.q(0);
      const double yy = x.q(1);
      const double inv = 1.0 / c.lambda;
      if (!(yy > -0.5 * inv && yy < inv - std::sqrt(3.0) * std::abs(xx))) return false;
      return energy(s, x) < inv * inv / 6.0;
    }
  }
  return false;
}

inline PhaseState propose(const SystemSpec& s, Rng& rng) {
  const auto& c = s.constants;
  const int n = s.size();
  Vector q = Vector::Zero(n);
  Vector p = Vector::Zero(n);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (s.kind) {
    case SystemKind::mass_spring: {
      // Level set of H is an ellipse; uniform energy, uniform angle.
      const double e = uniform(rng, 0.5, 4.5);
      const double theta = uniform(rng, 0.0, two_pi);
      q(0) = std::sqrt(2.0 * e / c.k) * std::cos(theta);
      p(0) = std::sqrt(2.0 * e * c.m) * std::sin(theta);
      break;
    }
    case SystemKind::pendulum: {
      const double mgl = c.m * c.g * c.l;
      const double e = uniform(rng, 1.3, 2.3);
      const double q_max = std::acos(std::max(-1.0, 1.0 - e / mgl));
      q(0) = uniform(rng, -q_max, q_max);
      const double kinetic = std::max(0.0, e - mgl * (1.0 - std::cos(q(0))));
      const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      p(0) = sign * std::sqrt(2.0 * c.m * c.l * c.l * kinetic);
      break;
    }
    case SystemKind::two_body_grav: {
      // Mirror-symmetric pair about a fixed centre of mass, near-circular.
      const double r = uniform(rng, 0.5, 1.5);
      const double theta = uniform(rng, 0.0, two_pi);
      const double sep = 2.0 * r;
      const double force = c.grav_exponent * c.g * c.m * c.m / std::pow(sep, c.grav_exponent + 1.0);
      const double v = circular_speed(force, r, c.m) * (1.0 + 0.05 * normal(rng));
      const Eigen::Vector2d pos(r * std::cos(theta), r * std::sin(theta));
      const Eigen::Vector2d vel(-v * std::sin(theta), v * std::cos(theta));
      q.segment(0, 2) = pos;
      q.segment(2, 2) = -pos;
      p.segment(0, 2) = c.m * vel;
      p.segment(2, 2) = -c.m * vel;
      break;
    }
    case SystemKind::three_body_grav: {
      // Bodies on an annulus at 120 degree spacing with tangential velocity
      // from the equilateral circular solution, then zero total momentum.
      const double theta = uniform(rng, 0.0, two_pi);
      for (int i = 0; i < 3; ++i) {
        const double r = uniform(rng, 0.5, 1.5);
        const double a = theta + two_pi * i / 3.0;
        const double side = r * std::sqrt(3.0);
        const double force =
            std::sqrt(3.0) * c.grav_exponent * c.g * c.m * c.m / std::pow(side, c.grav_exponent + 1.0);
        const double v = circular_speed(force, r, c.m) * (1.0 + 0.05 * normal(rng));
        q.segment(2 * i, 2) = Eigen::Vector2d(r * std::cos(a), r * std::sin(a));
        p.segment(2 * i, 2) = c.m * Eigen::Vector2d(-v * std::sin(a), v * std::cos(a));
      }
      Eigen::Vector2d mean = Eigen::Vector2d::Zero();
      for (int i = 0; i < 3; ++i) mean += p.segment(2 * i, 2);
      mean /= 3.0;
      for (int i = 0; i < 3; ++i) p.segment(2 * i, 2) -= mean;
      break;
    }
    case SystemKind::n_body_spring: {
      // Uniform positions in the unit box, Gaussian momenta, centre of mass
      // at rest at the origin.
      const int d = s.dim;
      Vector qm = Vector::Zero(d);
      Vector pm = Vector::Zero(d);
      for (int i = 0; i < s.n_bodies; ++i) {
        for (int a = 0; a < d; ++a) {
          q(i * d + a) = uniform(rng, -1.0, 1.0);
          p(i * d + a) = 0.5 * normal(rng);
        }
        qm += q.segment(i * d, d);
        pm += p.segment(i * d, d);
      }
      for (int i = 0; i < s.n_bodies; ++i) {
        q.segment(i * d, d) -= qm / s.n_bodies;
        p.segment(i * d, d) -= pm / s.n_bodies;
      }
      break;
    }
    case SystemKind::henon_heiles: {
      // Position in the central box, energy uniform in [1/12, 1/8] (bounded
      // regime for lambda = 1), momentum direction uniform.
      q(0) = uniform(rng, -0.5, 0.5);
      q(1) = uniform(rng, -0.5, 0.5);
      const double scale = 1.0 / (c.lambda * c.lambda);
      const double e = uniform(rng, scale / 12.0, scale / 8.0);
      const double v = potential_and_gradient(s, q).first;
      const double kinetic = e - v;
      if (kinetic <= 0) {
        p.setConstant(std::numeric_limits<double>::quiet_NaN());
        break;
      }
      const double phi = uniform(rng, 0.0, two_pi);
      const double speed = std::sqrt(2.0 * kinetic * c.m);
      p(0) = speed * std::cos(phi);
      p(1) = speed * std::sin(phi);
      break;
    }
  }
  return {q, p, s.n_bodies, s.dim, Convention::canonical_qp};
}

}  // namespace detail

/// Draws one initial condition from the system's training distribution.
/// Every returned state satisfies the distribution's constraint (energy band,
/// orbit radius, ...); candidates that miss it are redrawn.
inline PhaseState sample_initial(const SystemSpec& s, Rng& rng) {
  validate(s);
  for (int attempt = 0; attempt < kSamplerBudget; ++attempt) {
    PhaseState x = detail::propose(s, rng);
    if (x.finite() && detail::accept(s, x)) return x;
  }
  throw SamplerError(std::string("rejection budget exceeded for ") + to_string(s.kind));
}

}  // namespace symplect
