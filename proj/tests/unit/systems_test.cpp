#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "symplect/systems.hpp"

using namespace symplect;
using symplect::testing::rel_err;

namespace {

PhaseState state1(double q, double p) { return make_state(Vector::Constant(1, q), Vector::Constant(1, p), 1, 1); }

Vector fd_energy_gradient(const SystemSpec& s, const PhaseState& x, bool wrt_p) {
  auto f = [&](const Vector& v) {
    PhaseState y = x;
    (wrt_p ? y.p : y.q) = v;
    return energy(s, y);
  };
  return symplect::testing::fd_gradient(f, wrt_p ? x.p : x.q, 1e-6);
}

}  // namespace

TEST(Energy, HandValues) {
  EXPECT_DOUBLE_EQ(energy(make_system(SystemKind::mass_spring), state1(1.0, 0.0)), 0.5);
  EXPECT_NEAR(energy(make_system(SystemKind::pendulum), state1(std::numbers::pi / 2, 0.0)), 9.81, 1e-14);
  const auto hh = make_system(SystemKind::henon_heiles);
  Vector p(2);
  p << 0.3, 0.0;
  EXPECT_NEAR(energy(hh, make_state(Vector::Zero(2), p, 1, 2)), 0.045, 1e-16);
}

TEST(Energy, GravityCoincidentBodiesThrow) {
  const auto s = make_system(SystemKind::two_body_grav);
  EXPECT_THROW((void)energy(s, make_state(Vector::Zero(4), Vector::Zero(4), 2, 2)), SingularityError);
}

TEST(Energy, DimensionMismatchRejected) {
  EXPECT_THROW((void)energy(make_system(SystemKind::henon_heiles), state1(0.0, 0.0)), ContractError);
}

TEST(VectorField, HandValues) {
  auto [dq, dp] = vector_field(make_system(SystemKind::mass_spring), state1(1.0, 0.0));
  EXPECT_EQ(dq(0), 0.0);
  EXPECT_EQ(dp(0), -1.0);
  auto [dq2, dp2] = vector_field(make_system(SystemKind::pendulum), state1(0.1, 0.0));
  EXPECT_NEAR(dp2(0), -0.979366, 1e-6);
  EXPECT_DOUBLE_EQ(dp2(0), -9.81 * std::sin(0.1));
}

TEST(VectorField, MatchesEnergyDifferencesOnEverySystem) {
  for (auto kind : kAllSystems) {
    const auto s = make_system(kind, 3);
    Rng rng(17);
    for (int k = 0; k < 100; ++k) {
      const auto x = sample_initial(s, rng);
      auto [dq, dp] = vector_field(s, x);
      EXPECT_LT(rel_err(dq, fd_energy_gradient(s, x, true), 1e-8), 1e-7) << to_string(kind);
      EXPECT_LT(rel_err(dp, Vector(-fd_energy_gradient(s, x, false)), 1e-8), 1e-7) << to_string(kind);
    }
  }
}

TEST(Potential, HandValues) {
  auto [v, g] = potential_and_gradient(make_system(SystemKind::mass_spring), Vector::Constant(1, 2.0));
  EXPECT_EQ(v, 2.0);
  EXPECT_EQ(g(0), 2.0);
  auto [v0, g0] = potential_and_gradient(make_system(SystemKind::pendulum), Vector::Zero(1));
  EXPECT_EQ(v0, 0.0);
  EXPECT_EQ(g0(0), 0.0);
}

TEST(Potential, TwoBodyGradientMatchesDifferences) {
  for (double exponent : {1.0, 2.0}) {
    auto s = make_system(SystemKind::two_body_grav);
    s.constants.grav_exponent = exponent;
    Vector q(4);
    q << 0.7, -0.2, -0.4, 0.5;
    auto f = [&](const Vector& v) { return potential_and_gradient(s, v).first; };
    EXPECT_LT(rel_err(potential_and_gradient(s, q).second, symplect::testing::fd_gradient(f, q, 1e-6)), 1e-7);
  }
}

TEST(Potential, SeparableOnEverySystem) {
  for (auto kind : kAllSystems) {
    const auto s = make_system(kind, 1);
    Rng rng(5);
    for (int k = 0; k < 20; ++k) {
      const auto x = sample_initial(s, rng);
      PhaseState rest = x;
      rest.p.setZero();
      const double lhs = energy(s, x) - energy(s, rest);
      EXPECT_NEAR(lhs, kinetic_energy(s, x.p), 1e-12 * std::max(1.0, std::abs(lhs))) << to_string(kind);
    }
  }
}

TEST(Sampler, MassSpringOnLevelCircle) {
  const auto s = make_system(SystemKind::mass_spring);
  Rng rng(0);
  for (int k = 0; k < 200; ++k) {
    const auto x = sample_initial(s, rng);
    const double e = energy(s, x);
    EXPECT_GE(e, 0.5);
    EXPECT_LE(e, 4.5);
    EXPECT_NEAR(std::hypot(x.q(0), x.p(0)), std::sqrt(2.0 * e), 1e-12);
  }
}

TEST(Sampler, PendulumEnergyBand) {
  const auto s = make_system(SystemKind::pendulum);
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const double e = energy(s, sample_initial(s, rng));
    EXPECT_GE(e, 1.3);
    EXPECT_LE(e, 2.3);
  }
}

TEST(Sampler, TwoBodyRadiiAndFixedCentre) {
  const auto s = make_system(SystemKind::two_body_grav);
  Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    const auto x = sample_initial(s, rng);
    for (int i = 0; i < 2; ++i) {
      const double r = x.q.segment(2 * i, 2).norm();
      EXPECT_GE(r, 0.5);
      EXPECT_LE(r, 1.5);
    }
    EXPECT_LT((x.q.segment(0, 2) + x.q.segment(2, 2)).norm(), 1e-15);
    EXPECT_LT((x.p.segment(0, 2) + x.p.segment(2, 2)).norm(), 1e-15);
  }
}

TEST(Sampler, ThreeBodyAndSpringsHaveZeroMomentum) {
  for (auto kind : {SystemKind::three_body_grav, SystemKind::n_body_spring}) {
    const auto s = make_system(kind, 4);
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
      const auto x = sample_initial(s, rng);
      Vector total = Vector::Zero(2);
      for (int i = 0; i < s.n_bodies; ++i) total += x.p.segment(2 * i, 2);
      EXPECT_LT(total.norm(), 1e-12);
    }
  }
}

TEST(Sampler, HenonHeilesBounded) {
  const auto s = make_system(SystemKind::henon_heiles);
  Rng rng(4);
  for (int k = 0; k < 500; ++k) EXPECT_LT(energy(s, sample_initial(s, rng)), 1.0 / 6.0);
}

TEST(Sampler, DeterministicGivenSeed) {
  for (auto kind : kAllSystems) {
    const auto s = make_system(kind, 9);
    Rng a(42);
    Rng b(42);
    const auto x = sample_initial(s, a);
    const auto y = sample_initial(s, b);
    EXPECT_EQ(x.q, y.q);
    EXPECT_EQ(x.p, y.p);
  }
}

TEST(Sampler, BudgetExhaustionThrows) {
  auto s = make_system(SystemKind::henon_heiles);
  s.constants.lambda = 1e3;  // the energy band sits above the escape energy
  Rng rng(0);
  EXPECT_THROW((void)sample_initial(s, rng), SamplerError);
}

TEST(Systems, SpringConstantsFromSeed) {
  const auto a = make_system(SystemKind::n_body_spring, 7);
  ASSERT_EQ(a.constants.spring_k.size(), 5u);
  for (double k : a.constants.spring_k) {
    EXPECT_GE(k, 0.5);
    EXPECT_LE(k, 1.5);
  }
  EXPECT_EQ(a, make_system(SystemKind::n_body_spring, 7));
  EXPECT_NE(a, make_system(SystemKind::n_body_spring, 8));
}

TEST(Systems, NamesRoundTrip) {
  for (auto kind : kAllSystems) EXPECT_EQ(system_from_string(to_string(kind)), kind);
  EXPECT_THROW(system_from_string("spring"), ConfigError);
}
