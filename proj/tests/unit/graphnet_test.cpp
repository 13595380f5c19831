#include <gtest/gtest.h>

#include <filesystem>

#include "oracles.hpp"
#include "symplect/graphnet.hpp"

using namespace symplect;
using namespace symplect::graph;
using symplect::testing::rel_err;

namespace {

GnConfig small_config(int features, int pos, bool relative, OutputKind kind = OutputKind::scalar_energy) {
  GnConfig c;
  c.feature_dim = features;
  c.pos_dim = pos;
  c.relative = relative;
  c.message_dim = 6;
  c.embed_dim = 5;
  c.hidden_width = 12;
  c.hidden_layers = 2;
  c.output_kind = kind;
  c.out_dim = features;
  return c;
}

GraphState random_graph(std::mt19937_64& rng, int n, int f) {
  GraphState g;
  g.node_features = Matrix(n, f);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < g.node_features.size(); ++i) g.node_features.data()[i] = nd(rng);
  g.edge_index = fully_connected(n);
  g.edge_features = Matrix(g.edge_index.size(), 0);
  return g;
}

double energy_of(const GnParams& p, const GraphState& g) { return gn_forward(p, g).output.value()(0, 0); }

}  // namespace

TEST(BuildGraph, EdgeCounts) {
  Rng rng(0);
  const auto s3 = sample_initial(make_system(SystemKind::three_body_grav), rng);
  const auto g3 = build_graph(s3, true);
  EXPECT_EQ(g3.edges(), 6);
  for (auto [s, r] : g3.edge_index) EXPECT_NE(s, r);
  EXPECT_EQ(g3.node_features.cols(), 4);

  const auto g1 = build_graph(make_state(Vector::Zero(2), Vector::Zero(2), 1, 2), false);
  EXPECT_EQ(g1.edges(), 0);
  EXPECT_EQ(g1.nodes(), 1);
}

TEST(BuildGraph, PositionsOnlyForPotentialNets) {
  Rng rng(1);
  const auto spec = make_system(SystemKind::n_body_spring, 0);
  const auto s = sample_initial(spec, rng);
  const auto g = build_graph(s, false);
  ASSERT_EQ(g.nodes(), 5);
  ASSERT_EQ(g.node_features.cols(), 2);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(Vector(g.node_features.row(i).transpose()), Vector(s.q.segment(2 * i, 2)));
  EXPECT_EQ(g.edges(), 20);
}

TEST(GnForward, PermutationInvariantEnergy) {
  std::mt19937_64 rng(3);
  for (bool relative : {false, true}) {
    const auto p = gn_init(small_config(4, 2, relative), 11);
    const auto g = random_graph(rng, 4, 4);
    const std::vector<int> perm = {2, 0, 3, 1};  // new row k holds old node perm[k]
    GraphState h = g;
    std::vector<int> where(4);
    for (int k = 0; k < 4; ++k) {
      h.node_features.row(k) = g.node_features.row(perm[static_cast<std::size_t>(k)]);
      where[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = k;
    }
    for (auto& [s, r] : h.edge_index) {
      s = where[static_cast<std::size_t>(s)];
      r = where[static_cast<std::size_t>(r)];
    }
    EXPECT_NEAR(energy_of(p, g), energy_of(p, h), 1e-12);
  }
}

TEST(GnForward, NodeDerivativesPermuteWithNodes) {
  std::mt19937_64 rng(4);
  const auto p = gn_init(small_config(4, 2, true, OutputKind::node_derivatives), 5);
  const auto g = random_graph(rng, 3, 4);
  GraphState h = g;
  h.node_features.row(0) = g.node_features.row(2);
  h.node_features.row(2) = g.node_features.row(0);
  const Matrix a = gn_forward(p, g).output.value();
  const Matrix b = gn_forward(p, h).output.value();
  EXPECT_LT((a.col(0) - b.col(2)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.col(1) - b.col(1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.rows(), 4);
}

TEST(GnForward, ZeroWeightsGiveBiasSum) {
  std::mt19937_64 rng(5);
  auto p = gn_init(small_config(2, 2, false), 1);
  for (auto* b : blocks(p)) {
    for (auto& w : b->weights) w.setZero();
    for (auto& bias : b->biases) bias.setConstant(0.25);
  }
  const double e1 = energy_of(p, random_graph(rng, 3, 2));
  const double e2 = energy_of(p, random_graph(rng, 3, 2));
  EXPECT_EQ(e1, e2);
  EXPECT_DOUBLE_EQ(e1, 3 * 0.25);
}

TEST(GnForward, SingleNodeIsDefined) {
  std::mt19937_64 rng(6);
  const auto p = gn_init(small_config(2, 2, true), 2);
  const auto g = random_graph(rng, 1, 2);
  const double e = energy_of(p, g);
  EXPECT_TRUE(std::isfinite(e));
  // The aggregate is zero and relative mode hides absolute positions.
  const auto h = random_graph(rng, 1, 2);
  EXPECT_EQ(e, energy_of(p, h));
}

TEST(GnForward, TranslationInvariantInRelativeMode) {
  std::mt19937_64 rng(7);
  const auto p = gn_init(small_config(4, 2, true), 3);
  const auto g = random_graph(rng, 4, 4);
  GraphState h = g;
  h.node_features.col(0).array() += 3.0;
  h.node_features.col(1).array() -= 1.5;
  EXPECT_NEAR(energy_of(p, g), energy_of(p, h), 1e-12);
}

TEST(GnForward, FeatureDimMismatchRejected) {
  std::mt19937_64 rng(8);
  const auto p = gn_init(small_config(2, 2, false), 3);
  EXPECT_THROW((void)gn_forward(p, random_graph(rng, 3, 4)), ContractError);
}

TEST(GnGradient, TwoBodyMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (bool relative : {false, true}) {
    const auto p = gn_init(small_config(4, 2, relative), 21);
    const auto g = random_graph(rng, 2, 4);
    const Matrix grad = gn_input_gradient(p, g).output.value();  // F x N
    auto f = [&](const Vector& flat) {
      GraphState h = g;
      h.node_features = Eigen::Map<const Matrix>(flat.data(), 2, 4);
      return energy_of(p, h);
    };
    const Vector x0 = Eigen::Map<const Vector>(g.node_features.data(), 8);
    const Vector fd = symplect::testing::fd_gradient(f, x0, 1e-5);
    const Matrix grad_nf = grad.transpose();
    EXPECT_LT(rel_err(Vector(Eigen::Map<const Vector>(grad_nf.data(), 8)), fd), 1e-6) << relative;
  }
}

TEST(GnGradient, ManyNodesWithExtraFeatures) {
  std::mt19937_64 rng(10);
  const auto p = gn_init(small_config(5, 2, true), 4);
  const auto g = random_graph(rng, 5, 5);
  const Matrix grad = gn_input_gradient(p, g).output.value().transpose();
  auto f = [&](const Vector& flat) {
    GraphState h = g;
    h.node_features = Eigen::Map<const Matrix>(flat.data(), 5, 5);
    return energy_of(p, h);
  };
  const Vector fd = symplect::testing::fd_gradient(f, Eigen::Map<const Vector>(g.node_features.data(), 25), 1e-5);
  EXPECT_LT(rel_err(Vector(Eigen::Map<const Vector>(grad.data(), 25)), fd), 1e-6);
}

TEST(GnGradient, ParameterGradientThroughFeatureGradient) {
  std::mt19937_64 rng(11);
  const auto p = gn_init(small_config(2, 2, true), 8);
  const auto g = random_graph(rng, 3, 2);
  const Matrix target = Matrix::Random(2, 3);
  auto loss_at = [&](const GnParams& q) {
    auto r = gn_input_gradient(q, g);
    auto loss = diffnet::sum_all(diffnet::square(r.output - r.tape->constant(target)));
    return std::make_pair(r, loss);
  };
  auto [r, loss] = loss_at(p);
  const auto grads = gn_grad_params(*r.tape, loss, r.params, p);
  auto flat = [](const GnParams& q) {
    std::vector<Vector> parts;
    Eigen::Index n = 0;
    for (const auto* b : blocks(q)) {
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
  };
  auto unflat = [&](const Vector& v) {
    GnParams q = p;
    Eigen::Index n = 0;
    for (auto* b : blocks(q)) {
      const auto c = static_cast<Eigen::Index>(b->parameter_count());
      *b = diffnet::unflatten(*b, v.segment(n, c));
      n += c;
    }
    return q;
  };
  const Vector analytic = flat(grads);
  const Vector x0 = flat(p);
  for (int probe = 0; probe < 10; ++probe) {
    const Vector dir = symplect::testing::random_unit(rng, x0.size());
    auto f = [&](const Vector& v) { return loss_at(unflat(v)).second.value()(0, 0); };
    const double fd = symplect::testing::central_difference(f, x0, dir, 1e-5);
    EXPECT_LT(rel_err(analytic.dot(dir), fd, 1e-8), 1e-5) << probe;
  }
}

TEST(GnBatch, ColumnsMatchSingleGraphs) {
  std::mt19937_64 rng(12);
  const auto p = gn_init(small_config(2, 2, true), 9);
  const int n = 3, b = 4;
  Matrix x(2, n * b);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std::normal_distribution<double>()(rng);
  const auto topo = make_topology(n, b);
  const Matrix e = gn_energy(view(p), x, topo);
  const Matrix grad = gn_feature_gradient(view(p), x, topo);
  ASSERT_EQ(e.cols(), b);
  for (int k = 0; k < b; ++k) {
    GraphState g;
    g.node_features = x.middleCols(k * n, n).transpose();
    g.edge_index = fully_connected(n);
    EXPECT_NEAR(e(0, k), energy_of(p, g), 1e-13);
    EXPECT_LT((grad.middleCols(k * n, n) - gn_input_gradient(p, g).output.value()).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(GnCheckpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "symplect_gn_ckpt";
  std::filesystem::create_directories(dir);
  for (auto kind : {OutputKind::scalar_energy, OutputKind::node_derivatives}) {
    const auto p = gn_init(small_config(4, 2, true, kind), 13);
    save_gn(dir / "model", p);
    EXPECT_EQ(load_gn(dir / "model"), p);
  }
  std::filesystem::remove_all(dir);
}

TEST(GnConfig, RejectsBadDims) {
  auto c = small_config(2, 3, true);
  EXPECT_THROW((void)gn_init(c, 0), ConfigError);
  c = small_config(2, 2, false);
  c.message_dim = 0;
  EXPECT_THROW((void)gn_init(c, 0), ConfigError);
}
