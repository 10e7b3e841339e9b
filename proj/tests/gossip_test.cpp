#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/gossip.hpp"

namespace ggn::gossip {
namespace {

Matrix mat(int n, std::initializer_list<double> v) {
  Matrix M(n, n);
  Index k = 0;
  for (double d : v) M(k / n, k % n) = d, ++k;
  return M;
}

GossipConfig ure_config(int n, double beta, double p = 0.0, std::uint64_t seed = 1) {
  GossipConfig c;
  c.protocol = Protocol::URE;
  c.beta = beta;
  c.ure_pick_probs = uniform_pick_matrix(n);
  c.link_failure_prob = p;
  c.rng_seed = seed;
  return c;
}

TEST(CseWeights, CompleteGraphOfThree) {
  const auto W = build_cse_weights(Topology::complete(3), 0.3);
  EXPECT_LT((W.entries - mat(3, {0.7, 0.15, 0.15, 0.15, 0.7, 0.15, 0.15, 0.15, 0.7})).cwiseAbs().maxCoeff(),
            1e-15);
  EXPECT_DOUBLE_EQ(W.eta, 0.15);
  EXPECT_TRUE(check_doubly_stochastic(W.entries).ok());
}

TEST(CseWeights, PathOfThree) {
  const auto W = build_cse_weights(Topology::path(3), 0.5);
  EXPECT_LT((W.entries - mat(3, {0.75, 0.25, 0, 0.25, 0.5, 0.25, 0, 0.25, 0.75})).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CseWeights, EmptyEdgeSetIsIdentity) {
  const auto W = build_cse_weights(Topology{4, {}}, 0.3);
  EXPECT_EQ(W.entries, Matrix::Identity(4, 4));
  EXPECT_TRUE(W.identity_fallback);
}

TEST(CseWeights, RejectsSelfLoop) {
  EXPECT_THROW((void)build_cse_weights(Topology{3, {{1, 1}}}, 0.3), InvalidArgument);
}

TEST(UreWeights, PairOfTwoAverages) {
  const auto W = pairwise_weights(2, 0, 1, 0.5);
  EXPECT_EQ(W.entries, mat(2, {0.5, 0.5, 0.5, 0.5}));
}

TEST(UreWeights, PairOneThreeLeavesTwoIdle) {
  const auto W = pairwise_weights(3, 0, 2, 0.5);
  EXPECT_EQ(W.entries, mat(3, {0.5, 0, 0.5, 0, 1, 0, 0.5, 0, 0.5}));
}

TEST(UreWeights, FailedLinkGivesIdentity) {
  auto cfg = ure_config(5, 0.5, 0.999999);
  std::mt19937_64 rng(3);
  const auto W = sample_ure_round(cfg, rng);
  EXPECT_EQ(W.entries, Matrix::Identity(5, 5));
  EXPECT_TRUE(W.identity_fallback);
}

TEST(UreWeights, DrawOrderIsWakePartnerFailure) {
  auto cfg = ure_config(6, 0.4, 0.3);
  std::mt19937_64 a(42), b(42);
  const UreDraw d = draw_ure(cfg, a);
  const int wake = std::uniform_int_distribution<int>(0, 5)(b);
  const Vector row = cfg.ure_pick_probs.row(wake).transpose();
  const int partner = std::discrete_distribution<int>(row.data(), row.data() + row.size())(b);
  const bool failed = std::uniform_real_distribution<double>(0.0, 1.0)(b) < 0.3;
  EXPECT_EQ(d.waking, wake);
  EXPECT_EQ(d.partner, partner);
  EXPECT_EQ(d.link_failed, failed);
  EXPECT_NE(d.waking, d.partner);
}

TEST(UreWeights, EmpiricalMeanMatchesExpectation) {
  auto cfg = ure_config(4, 0.5);
  std::mt19937_64 rng(2024);
  Matrix sum = Matrix::Zero(4, 4);
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) sum += sample_ure_round(cfg, rng).entries;
  EXPECT_LT((sum / draws - expected_ure_weights(cfg)).cwiseAbs().maxCoeff(), 1e-2);
}

TEST(UreWeights, NeighborPickRespectsTopology) {
  const Matrix G = neighbor_pick_matrix(Topology::path(3));
  EXPECT_EQ(G, mat(3, {0, 1, 0, 0.5, 0, 0.5, 0, 1, 0}));
  EXPECT_EQ(neighbor_pick_matrix(Topology::complete(4)), uniform_pick_matrix(4));
  EXPECT_THROW((void)neighbor_pick_matrix(Topology{3, {{0, 1}}}), InvalidArgument);
}

TEST(GossipConfig, ValidationErrors) {
  auto cfg = ure_config(3, 0.5);
  EXPECT_NO_THROW(cfg.validate(3));
  cfg.beta = 1.0;
  EXPECT_THROW(cfg.validate(3), InvalidArgument);
  cfg = ure_config(3, 0.5, 1.0);
  EXPECT_THROW(cfg.validate(3), InvalidArgument);
  cfg = ure_config(3, 0.5);
  cfg.ure_pick_probs(0, 0) = 0.5;
  EXPECT_THROW(cfg.validate(3), InvalidArgument);
}

TEST(GossipRound, IdentityLeavesPayloads) {
  const std::vector<Vector> p{Vector::Constant(2, 1.0), Vector::Constant(2, 5.0)};
  const auto out = gossip_round(p, make_weight_matrix(Matrix::Identity(2, 2)));
  EXPECT_EQ(out[0], p[0]);
  EXPECT_EQ(out[1], p[1]);
}

TEST(GossipRound, PerfectAveragingGivesMean) {
  const std::vector<Vector> p{Vector::Constant(1, 1.0), Vector::Constant(1, 2.0), Vector::Constant(1, 3.0)};
  const auto out = gossip_round(p, make_weight_matrix(Matrix::Constant(3, 3, 1.0 / 3.0)));
  for (const auto& v : out) EXPECT_NEAR(v[0], 2.0, 1e-15);
}

TEST(GossipRound, DimensionMismatchThrows) {
  const std::vector<Vector> p{Vector::Constant(1, 1.0), Vector::Constant(2, 2.0)};
  EXPECT_THROW((void)gossip_round(p, make_weight_matrix(Matrix::Identity(2, 2))), InvalidArgument);
  EXPECT_THROW((void)gossip_round(p, make_weight_matrix(Matrix::Identity(3, 3))), InvalidArgument);
}

TEST(GossipRound, MixColumnsAgreesWithGossipRound) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix P(5, 4);
  for (Index i = 0; i < P.size(); ++i) P.data()[i] = n(rng);
  std::vector<Vector> cols;
  for (Index i = 0; i < 4; ++i) cols.push_back(P.col(i));
  for (const auto& W : {build_cse_weights(Topology::ring(4), 0.4), pairwise_weights(4, 1, 3, 0.3)}) {
    Matrix Q = P;
    mix_columns(Q, W);
    const auto out = gossip_round(cols, W);
    for (Index i = 0; i < 4; ++i) EXPECT_LT((Q.col(i) - out[i]).norm(), 1e-15);
  }
}

TEST(GossipRound, RandomMatricesPreserveMean) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(2, 8);
  std::uniform_real_distribution<double> beta(0.05, 0.95), coin(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int t = 0; t < 500; ++t) {
    const int I = size(rng);
    Topology topo{I, {}};
    for (int a = 0; a < I; ++a)
      for (int b = a + 1; b < I; ++b)
        if (coin(rng) < 0.5) topo.edges.emplace_back(a, b);
    const auto W = t % 2 ? build_cse_weights(topo, beta(rng)) : sample_ure_round(ure_config(I, beta(rng)), rng);
    EXPECT_TRUE(check_doubly_stochastic(W.entries).ok());
    std::vector<Vector> p(I, Vector(3));
    Vector mean = Vector::Zero(3);
    for (auto& v : p) {
      for (Index k = 0; k < 3; ++k) v[k] = n(rng);
      mean += v / I;
    }
    const auto out = gossip_round(p, W);
    Vector after = Vector::Zero(3);
    for (const auto& v : out) after += v / I;
    EXPECT_LT((after - mean).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(DoublyStochastic, DetectsViolations) {
  EXPECT_FALSE(check_doubly_stochastic(mat(2, {0.6, 0.5, 0.4, 0.5})).ok());
  EXPECT_FALSE(check_doubly_stochastic(mat(2, {1.5, -0.5, -0.5, 1.5})).ok());
  EXPECT_FALSE(check_doubly_stochastic(mat(2, {0.5, 0.5, 0.4, 0.6})).ok());
  EXPECT_TRUE(check_doubly_stochastic(mat(2, {0.3, 0.7, 0.7, 0.3})).ok());
}

TEST(LambdaEta, DirectEvaluation) {
  EXPECT_NEAR(lambda_eta(0.15, 3, 1), std::sqrt(1.0 - 0.0225), 1e-15);
  EXPECT_NEAR(lambda_eta(0.15, 3, 1), 0.988686, 1e-6);
  EXPECT_DOUBLE_EQ(lambda_eta(0.5, 2, 1), 0.5);
  EXPECT_GT(lambda_eta(1e-6, 3, 1), 0.999999);
  EXPECT_THROW((void)lambda_eta(0.5, 1, 1), InvalidArgument);
  EXPECT_THROW((void)lambda_eta(1.0, 3, 1), InvalidArgument);
}

TEST(ProductContraction, IdentitySequenceFlagsNonContraction) {
  const std::vector<WeightMatrix> seq(10, make_weight_matrix(Matrix::Identity(3, 3)));
  const auto r = verify_lemma1_bound(seq, 0.5, 3, 1);
  EXPECT_FALSE(r.contracting);
  EXPECT_FALSE(r.satisfied);
}

TEST(ProductContraction, PerfectAveragingHasZeroDeviation) {
  const std::vector<WeightMatrix> seq{make_weight_matrix(Matrix::Constant(4, 4, 0.25))};
  const auto r = verify_lemma1_bound(seq, 0.25, 4, 1);
  EXPECT_LT(r.deviation.front(), 1e-15);
  EXPECT_TRUE(r.satisfied);
}

TEST(ProductContraction, RepeatedCseMatchesSecondEigenvalue) {
  const auto W = build_cse_weights(Topology::ring(5), 0.4);
  const std::vector<WeightMatrix> seq(30, W);
  const auto r = verify_lemma1_bound(seq, W.eta, 5, 1);
  EXPECT_TRUE(r.satisfied);
  Eigen::SelfAdjointEigenSolver<Matrix> es(W.entries);
  const double second = std::max(std::abs(es.eigenvalues()[0]), std::abs(es.eigenvalues()[3]));
  // Entrywise deviation of W^{l+1} is at most |lambda_2|^{l+1}.
  for (std::size_t l = 0; l < r.deviation.size(); ++l) {
    EXPECT_LE(r.deviation[l], std::pow(second, l + 1.0) + 1e-14);
    if (l > 0) EXPECT_LE(r.deviation[l], r.deviation[l - 1] + 1e-15);
  }
}

TEST(Connectivity, Examples) {
  const std::vector<Topology> full(3, Topology::complete(3));
  EXPECT_TRUE(check_connectivity(full, 1));
  const std::vector<Topology> alternating{Topology{3, {{0, 1}}}, Topology{3, {{1, 2}}},
                                          Topology{3, {{0, 1}}}, Topology{3, {{1, 2}}}};
  EXPECT_TRUE(check_connectivity(alternating, 2));
  EXPECT_FALSE(check_connectivity(alternating, 1));
  const std::vector<Topology> isolated(4, Topology{3, {{0, 1}}});
  EXPECT_FALSE(check_connectivity(isolated, 2));
  EXPECT_THROW((void)check_connectivity(isolated, 5), InvalidArgument);
}

TEST(WeightSources, UreStreamIsReproducible) {
  auto a = ure_weights(ure_config(5, 0.5, 0.2, 77));
  auto b = ure_weights(ure_config(5, 0.5, 0.2, 77));
  for (int t = 0; t < 50; ++t) EXPECT_EQ(a().entries, b().entries);
}

}  // namespace
}  // namespace ggn::gossip
