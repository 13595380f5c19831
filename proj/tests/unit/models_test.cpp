#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "symplect/models.hpp"

using namespace symplect;
using namespace symplect::models;
using symplect::testing::rel_err;

namespace {

ModelConfig small(Family f, bool graph, std::uint64_t seed = 1) {
  ModelConfig c;
  c.family = f;
  c.use_graph = graph;
  c.hidden_width = 16;
  c.message_dim = 8;
  c.embed_dim = 8;
  c.seed = seed;
  return c;
}

PhaseState state1(double q, double p) { return make_state(Vector::Constant(1, q), Vector::Constant(1, p), 1, 1); }

Vector flat_params(const ModelSpec& m) {
  std::vector<Vector> parts;
  Eigen::Index n = 0;
  for (const auto* b : param_blocks(m)) {
    parts.push_back(diffnet::flatten(*b));
    n += parts.back().size();
  }
  Vector out(n);
  n = 0;
  for (const auto& v : parts) {
    out.segment(n, v.size()) = v;
    n += v.size();
  }
  return out;
}

ModelSpec with_params(ModelSpec m, const Vector& flat) {
  Eigen::Index n = 0;
  for (auto* b : param_blocks(m)) {
    const auto c = static_cast<Eigen::Index>(b->parameter_count());
    *b = diffnet::unflatten(*b, flat.segment(n, c));
    n += c;
  }
  return m;
}

Vector flat_grads(const std::vector<diffnet::NetParams>& g) {
  Eigen::Index n = 0;
  for (const auto& b : g) n += static_cast<Eigen::Index>(b.parameter_count());
  Vector out(n);
  n = 0;
  for (const auto& b : g) {
    const Vector v = diffnet::flatten(b);
    out.segment(n, v.size()) = v;
    n += v.size();
  }
  return out;
}

}  // namespace

TEST(BuildModel, CellNames) {
  const auto spring = make_system(SystemKind::n_body_spring, 0);
  const auto pgn = build_model(small(Family::potential, true), spring);
  EXPECT_EQ(model_name(pgn.family, pgn.use_graph()), "PGN");
  EXPECT_EQ(pgn.gn.config.output_kind, graph::OutputKind::scalar_energy);
  EXPECT_TRUE(pgn.gn.config.relative);
  EXPECT_EQ(pgn.gn.config.feature_dim, 3);  // position + spring constant

  const auto ogn = build_model(small(Family::baseline, true), spring);
  EXPECT_EQ(model_name(ogn.family, ogn.use_graph()), "OGN");
  EXPECT_EQ(ogn.gn.config.output_kind, graph::OutputKind::node_derivatives);
  EXPECT_EQ(ogn.gn.config.out_dim, 4);

  const auto hnn = build_model(small(Family::hamiltonian, false), make_system(SystemKind::pendulum));
  EXPECT_EQ(model_name(hnn.family, hnn.use_graph()), "HNN");
  EXPECT_EQ(hnn.mlp.input_dim(), 2);
  EXPECT_EQ(hnn.mlp.output_dim(), 1);
}

TEST(BuildModel, TableWidths) {
  ModelConfig c;
  c.family = Family::potential;
  const auto m = build_model(c, make_system(SystemKind::mass_spring));
  EXPECT_EQ(m.mlp.layer_dims, (std::vector<int>{1, 200, 200, 1}));
}

TEST(BuildModel, RejectsBadWidth) {
  auto c = small(Family::potential, false);
  c.hidden_width = 0;
  EXPECT_THROW((void)build_model(c, make_system(SystemKind::mass_spring)), ConfigError);
}

TEST(PredictedField, AnalyticSubstitutionMatchesSystemField) {
  for (auto kind : kAllSystems) {
    const auto spec = make_system(kind, 2);
    Rng rng(3);
    for (int k = 0; k < 5; ++k) {
      const auto s = sample_initial(spec, rng);
      auto [dq, dp] = vector_field(spec, s);
      for (auto fam : kAllFamilies) {
        const auto r = predicted_field(analytic_model(fam, spec), s);
        EXPECT_LE((r.dq.value().col(0) - dq).cwiseAbs().maxCoeff(), 1e-12) << to_string(kind) << to_string(fam);
        EXPECT_LE((r.dp.value().col(0) - dp).cwiseAbs().maxCoeff(), 1e-12) << to_string(kind) << to_string(fam);
      }
    }
  }
}

TEST(PredictedField, ParameterGradientMatchesDifferences) {
  const auto spec = make_system(SystemKind::mass_spring);
  const auto s = state1(0.7, -0.4);
  for (auto fam : kAllFamilies) {
    for (bool graph : {false, true}) {
      const auto m = build_model(small(fam, graph, 5), spec);
      auto loss_of = [&](const ModelSpec& mm) {
        auto r = predicted_field(mm, s);
        auto loss = diffnet::sum_all(diffnet::square(r.dq - r.tape->constant(Matrix::Constant(1, 1, 0.3)))) +
                    diffnet::sum_all(diffnet::square(r.dp));
        return std::make_pair(r, loss);
      };
      auto [r, loss] = loss_of(m);
      const Vector g = flat_grads(gradients_from(r.tape->backward(loss), r.params, m));
      const Vector x0 = flat_params(m);
      Rng rng(7);
      auto f = [&](const Vector& v) { return loss_of(with_params(m, v)).second.value()(0, 0); };
      for (int probe = 0; probe < 5; ++probe) {
        const Vector dir = symplect::testing::random_unit(rng, x0.size());
        const double fd = symplect::testing::central_difference(f, x0, dir, 1e-5);
        EXPECT_LT(rel_err(g.dot(dir), fd, 1e-9), 1e-5) << model_name(fam, graph);
      }
    }
  }
}

TEST(PredictedField, LearnedEnergyGeneratesField) {
  // Hamiltonian and potential fields are the symplectic gradient of the
  // model's own energy, for MLP and single-node graph backbones alike.
  const auto spec = make_system(SystemKind::henon_heiles);
  Vector q(2), p(2);
  q << 0.1, -0.3;
  p << 0.2, 0.05;
  for (auto fam : {Family::hamiltonian, Family::potential}) {
    for (bool graph : {false, true}) {
      const auto m = build_model(small(fam, graph, 9), spec);
      const ModelField<Matrix> f(view(m));
      auto e_q = [&](const Vector& v) { return f.energy(Matrix(v), Matrix(p))(0, 0); };
      auto e_p = [&](const Vector& v) { return f.energy(Matrix(q), Matrix(v))(0, 0); };
      auto [dq, dp] = f.field(Matrix(q), Matrix(p));
      EXPECT_LT(rel_err(Vector(dq.col(0)), symplect::testing::fd_gradient(e_p, p, 1e-5)), 1e-6);
      EXPECT_LT(rel_err(Vector(-dp.col(0)), symplect::testing::fd_gradient(e_q, q, 1e-5)), 1e-6);
    }
  }
}

TEST(PredictedField, BatchedColumnsMatchSingleStates) {
  const auto spec = make_system(SystemKind::three_body_grav);
  Rng rng(4);
  const auto a = sample_initial(spec, rng);
  const auto b = sample_initial(spec, rng);
  Matrix q(6, 2), p(6, 2);
  q << a.q, b.q;
  p << a.p, b.p;
  for (auto fam : kAllFamilies) {
    for (bool graph : {false, true}) {
      const auto m = build_model(small(fam, graph, 2), spec);
      auto [dq, dp] = ModelField<Matrix>(view(m)).field(q, p);
      const auto rb = predicted_field(m, b);
      EXPECT_LT((dq.col(1) - rb.dq.value().col(0)).cwiseAbs().maxCoeff(), 1e-13);
      EXPECT_LT((dp.col(1) - rb.dp.value().col(0)).cwiseAbs().maxCoeff(), 1e-13);
    }
  }
}

TEST(ModelStep, OracleVerlet) {
  const auto m = analytic_model(Family::potential, make_system(SystemKind::mass_spring));
  const auto s = model_step(m, IntegratorId::vi2, state1(1.0, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(s.q(0), 0.995);
  EXPECT_DOUBLE_EQ(s.p(0), -0.09975);
}

TEST(ModelStep, ZeroBaselineFreezesState) {
  auto m = build_model(small(Family::baseline, false), make_system(SystemKind::pendulum));
  for (auto& w : m.mlp.weights) w.setZero();
  const auto s0 = state1(0.3, 0.2);
  for (auto id : kAllIntegrators) {
    const auto s = model_step(m, id, s0, 0.1);
    EXPECT_EQ(s.q, s0.q);
    EXPECT_EQ(s.p, s0.p);
  }
}

TEST(ModelStep, OracleRk4MatchesDirectStep) {
  const auto spec = make_system(SystemKind::pendulum);
  const auto s0 = state1(1.1, -0.5);
  const auto direct = make_stepper(IntegratorId::rk4, spec)(s0, 0.1);
  for (auto fam : kAllFamilies) {
    const auto s = model_step(analytic_model(fam, spec), IntegratorId::rk4, s0, 0.1);
    EXPECT_LE(std::abs(s.q(0) - direct.q(0)), 1e-15);
    EXPECT_LE(std::abs(s.p(0) - direct.p(0)), 1e-15);
  }
}

TEST(ModelStep, OracleEquivalenceOverHundredSteps) {
  for (auto kind : kAllSystems) {
    const auto spec = make_system(kind, 1);
    Rng rng(11);
    const auto s0 = sample_initial(spec, rng);
    for (auto id : kAllIntegrators) {
      const auto ref = rollout(make_stepper(id, spec), s0, 0.01, 100);
      for (auto fam : kAllFamilies) {
        const auto m = analytic_model(fam, spec);
        const auto tr = rollout(model_stepper(m, id), s0, 0.01, 100);
        ASSERT_EQ(tr.size(), ref.size());
        double worst = 0;
        for (std::size_t k = 0; k < tr.size(); ++k) {
          worst = std::max(worst, (tr.states[k].q - ref.states[k].q).cwiseAbs().maxCoeff());
          worst = std::max(worst, (tr.states[k].p - ref.states[k].p).cwiseAbs().maxCoeff());
        }
        EXPECT_LE(worst, 1e-12) << to_string(kind) << " " << to_string(id) << " " << to_string(fam);
      }
    }
  }
}

TEST(ModelStep, GeneralizedVelocityConvention) {
  auto spec = make_system(SystemKind::pendulum);
  spec.constants.l = 2.0;
  auto m = analytic_model(Family::potential, spec);
  m.convention = Convention::generalized_qv;
  auto s = state1(0.2, 0.5);
  const auto r = predicted_field(m, s);
  EXPECT_DOUBLE_EQ(r.dq.value()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.dp.value()(0, 0), -9.81 * 2.0 * std::sin(0.2) / 4.0);
}

TEST(Checkpoint, ModelRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "symplect_model_ckpt";
  std::filesystem::create_directories(dir);
  const auto spec = make_system(SystemKind::n_body_spring, 3);
  for (auto fam : kAllFamilies) {
    for (bool graph : {false, true}) {
      const auto m = build_model(small(fam, graph, 4), spec);
      save_model(dir / "m", m);
      EXPECT_EQ(load_model(dir / "m"), m) << model_name(fam, graph);
    }
  }
  std::filesystem::remove_all(dir);
}
