#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "params.hpp"
#include "symplect/evaluation.hpp"

using namespace symplect;
using namespace symplect::evaluation;
using symplect::testing::rel_err;

TEST(GeometricMean, HandValues) {
  EXPECT_NEAR(geometric_mean({4.0, 9.0}), 6.0, 1e-14);
  EXPECT_DOUBLE_EQ(geometric_mean({0.37}), 0.37);
  EXPECT_NEAR(geometric_mean({1e6, 1e-6}), 1.0, 1e-12);
  EXPECT_THROW(geometric_mean({}), ContractError);
}

TEST(GeometricMean, FloorAndScaleEquivariance) {
  EXPECT_NEAR(geometric_mean({0.0}), 1e-12, 1e-26);
  EXPECT_NEAR(geometric_mean({0.0, 1e-8}), 1e-10, 1e-24);
  const std::vector<double> v = {0.3, 2.0, 7.5, 1e-3};
  std::vector<double> scaled;
  for (double x : v) scaled.push_back(11.0 * x);
  EXPECT_LE(rel_err(geometric_mean(scaled), 11.0 * geometric_mean(v)), 1e-14);
}

TEST(GeometricMean, StdErrorOfLogs) {
  // logs are 0 and 2: sample sd sqrt(2), se = 1.
  EXPECT_NEAR(std_error_log({1.0, std::exp(2.0)}), 1.0, 1e-14);
  EXPECT_EQ(std_error_log({5.0}), 0.0);
}

TEST(Evaluate, ProtocolDefaults) {
  const auto spec = make_system(SystemKind::mass_spring);
  const auto m = evaluate_model(models::analytic_model(models::Family::potential, spec), IntegratorId::rk4, spec,
                                kDefaultIcs, kDefaultHorizonMult, 0.1, 3.0, 0);
  EXPECT_EQ(kDefaultIcs, 50);
  EXPECT_DOUBLE_EQ(kDefaultHorizonMult, 3.0);
  EXPECT_EQ(m.n_ics, 50);
  EXPECT_EQ(m.steps, 90);
  EXPECT_EQ(m.per_ic_state_mse.size(), 50u);
  EXPECT_EQ(m.per_ic_energy_mse.size(), 50u);
  EXPECT_DOUBLE_EQ(m.geo_state, geometric_mean(m.per_ic_state_mse));
  EXPECT_DOUBLE_EQ(m.geo_energy, geometric_mean(m.per_ic_energy_mse));
  EXPECT_EQ(m.diverged_count, 0);
}

TEST(Evaluate, OracleRk4OnMassSpring) {
  const auto spec = make_system(SystemKind::mass_spring);
  const auto m = evaluate_model(models::analytic_model(models::Family::hamiltonian, spec), IntegratorId::rk4, spec, 50,
                                3.0, 0.1, 3.0, 7);
  EXPECT_LT(m.geo_state, 1e-8);
}

TEST(Evaluate, HorizonMustBeWholeSteps) {
  const auto spec = make_system(SystemKind::mass_spring);
  const auto oracle = models::analytic_model(models::Family::potential, spec);
  EXPECT_THROW(evaluate_model(oracle, IntegratorId::rk4, spec, 2, 3.0, 0.07, 1.0, 0), ContractError);
  EXPECT_THROW(evaluate_model(oracle, IntegratorId::rk4, spec, 0, 3.0, 0.1, 1.0, 0), ContractError);
}

// A baseline with zero output weights leaves every state where it started.
// From (q, p) = (1, 0) the truth is (cos t, -sin t), so the per-step squared
// error averaged over both coordinates is (2 - 2 cos t) / 2.
TEST(Evaluate, FrozenStateClosedForm) {
  const auto spec = make_system(SystemKind::mass_spring);
  models::ModelConfig cfg;
  cfg.family = models::Family::baseline;
  cfg.hidden_width = 8;
  auto model = models::build_model(cfg, spec);
  for (auto& w : model.mlp.weights) w.setZero();
  for (auto& b : model.mlp.biases) b.setZero();
  const int steps = 90;
  const double h = 0.1;
  const auto m = evaluate_on(model, IntegratorId::rk4, spec, {make_state(Vector::Ones(1), Vector::Zero(1), 1, 1)}, h,
                             steps);
  double expected = 0.0;
  for (int k = 1; k <= steps; ++k) expected += 1.0 - std::cos(k * h);
  expected /= steps;
  EXPECT_LE(rel_err(m.per_ic_state_mse[0], expected), 1e-9);
  // Energy is conserved by both the frozen state and the truth.
  EXPECT_LE(m.per_ic_energy_mse[0], 1e-18);
  EXPECT_LE(rel_err(m.geo_state, expected), 1e-9);
}

TEST(Evaluate, SingleExactIcHitsTheFloor) {
  const auto spec = make_system(SystemKind::mass_spring);
  const auto oracle = models::analytic_model(models::Family::potential, spec);
  const auto m =
      evaluate_on(oracle, IntegratorId::vi2, spec, {make_state(Vector::Zero(1), Vector::Zero(1), 1, 1)}, 0.1, 30);
  EXPECT_EQ(m.per_ic_state_mse[0], 0.0);
  EXPECT_EQ(m.per_ic_energy_mse[0], 0.0);
  EXPECT_NEAR(m.geo_state, 1e-12, 1e-26);
  EXPECT_NEAR(m.geo_energy, 1e-12, 1e-26);
}

TEST(Evaluate, DivergedRolloutsAreClamped) {
  const auto spec = make_system(SystemKind::pendulum);
  models::ModelConfig cfg;
  cfg.family = models::Family::baseline;
  cfg.hidden_width = 8;
  auto model = models::build_model(cfg, spec);
  model.mlp.biases.back().setConstant(1e7);
  const auto m = evaluate_model(model, IntegratorId::rk1, spec, 6, 3.0, 0.1, 3.0, 1);
  EXPECT_EQ(m.diverged_count, 6);
  for (double v : m.per_ic_state_mse) EXPECT_EQ(v, kDivergedMse);
  EXPECT_DOUBLE_EQ(m.geo_state, kDivergedMse);
}

TEST(Evaluate, DivergenceIsPerColumn) {
  // dq/dt = 1e3 softplus(100 softplus(q) - 50): explosive from q = 1, inert
  // from q = -50.
  const auto spec = make_system(SystemKind::mass_spring);
  models::ModelConfig cfg;
  cfg.family = models::Family::baseline;
  cfg.hidden_width = 4;
  auto model = models::build_model(cfg, spec);
  for (auto& w : model.mlp.weights) w.setZero();
  for (auto& b : model.mlp.biases) b.setZero();
  model.mlp.weights[0](0, 0) = 1.0;
  model.mlp.weights[1](0, 0) = 100.0;
  model.mlp.biases[1](0, 0) = -50.0;
  model.mlp.weights[2](0, 0) = 1e3;
  const std::vector<PhaseState> ics = {make_state(Vector::Constant(1, -50.0), Vector::Zero(1), 1, 1),
                                       make_state(Vector::Ones(1), Vector::Zero(1), 1, 1),
                                       make_state(Vector::Constant(1, -50.0), Vector::Ones(1), 1, 1)};
  const auto m = evaluate_on(model, IntegratorId::rk1, spec, ics, 0.1, 30);
  EXPECT_EQ(m.diverged_count, 1);
  EXPECT_EQ(m.per_ic_state_mse[1], kDivergedMse);
  EXPECT_LT(m.per_ic_state_mse[0], 1e4);
  EXPECT_LT(m.per_ic_state_mse[2], 1e4);
}

TEST(Evaluate, MissingReferenceCountsAsDiverged) {
  const auto spec = make_system(SystemKind::two_body_grav);
  auto ics = test_initial_conditions(spec, 2, 4);
  Vector q(4);
  q << -1e-12, 0, 1e-12, 0;
  ics.push_back(make_state(q, Vector::Zero(4), 2, 2));
  const auto oracle = models::analytic_model(models::Family::potential, spec);
  const auto m = evaluate_on(oracle, IntegratorId::vi2, spec, ics, 0.1, 20);
  EXPECT_EQ(m.diverged_count, 1);
  EXPECT_EQ(m.per_ic_state_mse[2], kDivergedMse);
  EXPECT_LT(m.per_ic_state_mse[0], 1e-2);
}

TEST(Evaluate, OracleLowerBoundsAnUntrainedModel) {
  const auto spec = make_system(SystemKind::pendulum);
  models::ModelConfig cfg;
  cfg.hidden_width = 16;
  cfg.seed = 4;
  const auto model = models::build_model(cfg, spec);
  const auto before = symplect::testing::flat_params(model);
  const auto learned = evaluate_model(model, IntegratorId::vi4_yoshida, spec, 10, 3.0, 0.1, 3.0, 2);
  const auto oracle = evaluate_model(models::analytic_model(models::Family::potential, spec), IntegratorId::vi4_yoshida,
                                     spec, 10, 3.0, 0.1, 3.0, 2);
  EXPECT_LE(oracle.geo_state, learned.geo_state);
  EXPECT_LE(oracle.geo_energy, learned.geo_energy);
  EXPECT_EQ(learned.per_ic_learned_energy_mse.size(), 10u);
  EXPECT_TRUE(std::isfinite(learned.geo_learned_energy));
  // Evaluation leaves the model untouched.
  EXPECT_TRUE(symplect::testing::flat_params(model) == before);
}

TEST(Evaluate, BatchedRolloutMatchesSingleSteps) {
  const auto spec = make_system(SystemKind::henon_heiles);
  const auto ics = test_initial_conditions(spec, 4, 3);
  models::ModelConfig cfg;
  cfg.family = models::Family::hamiltonian;
  cfg.hidden_width = 16;
  const auto model = models::build_model(cfg, spec);
  Matrix q0(2, 4);
  Matrix p0(2, 4);
  for (int j = 0; j < 4; ++j) {
    q0.col(j) = ics[static_cast<std::size_t>(j)].q;
    p0.col(j) = ics[static_cast<std::size_t>(j)].p;
  }
  const auto roll = rollout_batch(IntegratorId::vi3, models::ModelField<Matrix>(models::view(model)), q0, p0, 0.1, 12);
  for (int j = 0; j < 4; ++j) {
    PhaseState s = ics[static_cast<std::size_t>(j)];
    for (int k = 0; k < 12; ++k) s = models::model_step(model, IntegratorId::vi3, s, 0.1);
    EXPECT_LE((roll.q[12].col(j) - s.q).norm(), 1e-12);
    EXPECT_LE((roll.p[12].col(j) - s.p).norm(), 1e-12);
  }
}
