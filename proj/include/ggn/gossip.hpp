#pragma once

// Doubly stochastic mixing for the two exchange protocols:
//   CSE - one static Laplacian-based weight matrix W = I - w L for every exchange.
//   URE - a random agent wakes up, picks a partner from its row of the pick
//         matrix, and the pair mixes with W = I - beta (e_i - e_j)(e_i - e_j)^T.
// Agents are indexed from 0 in code; text formats use 1-based numbering.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/nlls.hpp"

namespace ggn::gossip {

/// Tolerance used by all doubly-stochastic checks.
inline constexpr double kStochasticTol = 1e-12;

struct Topology {
  int n_agents = 0;
  std::vector<std::pair<int, int>> edges;

  void validate() const {
    if (n_agents < 1) throw InvalidArgument("topology needs at least one agent");
    for (auto [a, b] : edges) {
      if (a == b) throw InvalidArgument("topology edge is a self-loop");
      if (a < 0 || b < 0 || a >= n_agents || b >= n_agents)
        throw InvalidArgument("topology edge endpoint out of range");
    }
  }

  [[nodiscard]] Matrix adjacency() const {
    Matrix A = Matrix::Zero(n_agents, n_agents);
    for (auto [a, b] : edges) {
      A(a, b) = 1.0;
      A(b, a) = 1.0;
    }
    return A;
  }

  [[nodiscard]] static Topology complete(int n) {
    Topology t{n, {}};
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) t.edges.emplace_back(i, j);
    return t;
  }

  [[nodiscard]] static Topology path(int n) {
    Topology t{n, {}};
    for (int i = 0; i + 1 < n; ++i) t.edges.emplace_back(i, i + 1);
    return t;
  }

  [[nodiscard]] static Topology ring(int n) {
    Topology t = path(n);
    if (n > 2) t.edges.emplace_back(n - 1, 0);
    return t;
  }
};

struct WeightMatrix {
  Matrix entries;
  /// Minimum nonzero weight.
  double eta = 1.0;
  /// Set when the matrix degenerated to the identity (no usable links).
  bool identity_fallback = false;

  [[nodiscard]] int size() const { return static_cast<int>(entries.rows()); }
};

/// Smallest strictly positive entry.
[[nodiscard]] inline double min_nonzero_weight(const Matrix& W) {
  double eta = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < W.rows(); ++i)
    for (Index j = 0; j < W.cols(); ++j)
      if (W(i, j) > 0.0) eta = std::min(eta, W(i, j));
  return eta;
}

[[nodiscard]] inline WeightMatrix make_weight_matrix(Matrix entries) {
  WeightMatrix w;
  w.eta = min_nonzero_weight(entries);
  w.entries = std::move(entries);
  return w;
}

/// Outcome of the structural checks on a weight matrix.
struct StochasticCheck {
  bool symmetric = true;
  bool nonnegative = true;
  double max_row_deviation = 0.0;
  double max_col_deviation = 0.0;
  bool positive_diagonal = true;

  [[nodiscard]] bool ok(double tol = kStochasticTol) const {
    return symmetric && nonnegative && positive_diagonal && max_row_deviation <= tol &&
           max_col_deviation <= tol;
  }
};

[[nodiscard]] inline StochasticCheck check_doubly_stochastic(const Matrix& W,
                                                             double tol = kStochasticTol) {
  StochasticCheck c;
  c.symmetric = W.rows() == W.cols() && (W - W.transpose()).cwiseAbs().maxCoeff() <= tol;
  c.nonnegative = W.minCoeff() >= 0.0;
  c.max_row_deviation = (W.rowwise().sum().array() - 1.0).abs().maxCoeff();
  c.max_col_deviation = (W.colwise().sum().array() - 1.0).abs().maxCoeff();
  c.positive_diagonal = W.diagonal().minCoeff() > 0.0;
  return c;
}

/// W = I - w L with L = diag(A 1) - A and w = beta / max(A 1).
[[nodiscard]] inline WeightMatrix build_cse_weights(const Topology& topology, double beta) {
  topology.validate();
  if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgument("beta must lie in (0, 1)");
  const int n = topology.n_agents;
  const Matrix A = topology.adjacency();
  const Vector degree = A.rowwise().sum();
  const double max_degree = n > 0 ? degree.maxCoeff() : 0.0;
  if (max_degree == 0.0) {
    WeightMatrix w = make_weight_matrix(Matrix::Identity(n, n));
    w.identity_fallback = n > 1;
    return w;
  }
  const double step = beta / max_degree;
  Matrix L = -A;
  L.diagonal() += degree;
  return make_weight_matrix(Matrix::Identity(n, n) - step * L);
}

enum class Protocol { CSE, URE };

[[nodiscard]] inline const char* to_string(Protocol p) {
  return p == Protocol::CSE ? "cse" : "ure";
}

struct GossipConfig {
  Protocol protocol = Protocol::CSE;
  double beta = 0.5;
  /// Row-stochastic partner-pick matrix (URE), zero diagonal.
  Matrix ure_pick_probs;
  double link_failure_prob = 0.0;
  /// Connectivity interval L.
  int comm_interval = 1;
  std::uint64_t rng_seed = 0;

  void validate(int n_agents) const {
    if (!(beta > 0.0 && beta < 1.0)) throw InvalidArgument("beta must lie in (0, 1)");
    if (!(link_failure_prob >= 0.0 && link_failure_prob < 1.0))
      throw InvalidArgument("link failure probability must lie in [0, 1)");
    if (comm_interval < 1) throw InvalidArgument("communication interval must be >= 1");
    if (protocol == Protocol::URE) {
      if (ure_pick_probs.rows() != n_agents || ure_pick_probs.cols() != n_agents)
        throw InvalidArgument("URE pick matrix must be I x I");
      if (n_agents < 2) throw InvalidArgument("URE needs at least two agents");
      for (int i = 0; i < n_agents; ++i) {
        if (ure_pick_probs(i, i) != 0.0) throw InvalidArgument("URE pick matrix diagonal must be 0");
        if (ure_pick_probs.row(i).minCoeff() < 0.0)
          throw InvalidArgument("URE pick probabilities must be nonnegative");
        if (std::abs(ure_pick_probs.row(i).sum() - 1.0) > 1e-12)
          throw InvalidArgument("URE pick matrix rows must sum to 1");
      }
    }
  }
};

/// Uniform partner choice among the other I - 1 agents.
[[nodiscard]] inline Matrix uniform_pick_matrix(int n_agents) {
  Matrix G = Matrix::Constant(n_agents, n_agents, n_agents > 1 ? 1.0 / (n_agents - 1) : 0.0);
  G.diagonal().setZero();
  return G;
}

/// Uniform partner choice among each agent's graph neighbors.
[[nodiscard]] inline Matrix neighbor_pick_matrix(const Topology& topology) {
  topology.validate();
  const Matrix A = topology.adjacency();
  Matrix G = Matrix::Zero(topology.n_agents, topology.n_agents);
  for (int i = 0; i < topology.n_agents; ++i) {
    const double deg = A.row(i).sum();
    if (deg == 0.0) throw InvalidArgument("agent " + std::to_string(i) + " has no neighbor to pick");
    G.row(i) = A.row(i) / deg;
  }
  return G;
}

/// Pairwise mixing matrix I - beta (e_i - e_j)(e_i - e_j)^T.
[[nodiscard]] inline WeightMatrix pairwise_weights(int n_agents, int i, int j, double beta) {
  Matrix W = Matrix::Identity(n_agents, n_agents);
  W(i, i) -= beta;
  W(j, j) -= beta;
  W(i, j) += beta;
  W(j, i) += beta;
  return make_weight_matrix(std::move(W));
}

/// Draws of one URE exchange, in consumption order.
struct UreDraw {
  int waking = 0;
  int partner = 0;
  bool link_failed = false;
};

/// Consumes the generator in the order wake-up, partner, failure.
[[nodiscard]] inline UreDraw draw_ure(const GossipConfig& config, std::mt19937_64& rng) {
  const int n = static_cast<int>(config.ure_pick_probs.rows());
  UreDraw d;
  d.waking = std::uniform_int_distribution<int>(0, n - 1)(rng);
  const Vector row = config.ure_pick_probs.row(d.waking).transpose();
  d.partner = std::discrete_distribution<int>(row.data(), row.data() + row.size())(rng);
  d.link_failed = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.link_failure_prob;
  return d;
}

[[nodiscard]] inline WeightMatrix sample_ure_round(const GossipConfig& config, std::mt19937_64& rng) {
  if (config.protocol != Protocol::URE) throw InvalidArgument("sample_ure_round needs URE protocol");
  const int n = static_cast<int>(config.ure_pick_probs.rows());
  const UreDraw d = draw_ure(config, rng);
  if (d.link_failed) {
    WeightMatrix w = make_weight_matrix(Matrix::Identity(n, n));
    w.identity_fallback = true;
    return w;
  }
  return pairwise_weights(n, d.waking, d.partner, config.beta);
}

/// Analytic E[W] of one URE exchange under uniform wake-up.
[[nodiscard]] inline Matrix expected_ure_weights(const GossipConfig& config) {
  const int n = static_cast<int>(config.ure_pick_probs.rows());
  const double keep = 1.0 - config.link_failure_prob;
  Matrix E = Matrix::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double p = keep * config.ure_pick_probs(i, j) / n;
      if (p == 0.0) continue;
      E(i, i) -= p * config.beta;
      E(j, j) -= p * config.beta;
      E(i, j) += p * config.beta;
      E(j, i) += p * config.beta;
    }
  }
  return E;
}

/// output_i = sum_j W_ij payload_j.
[[nodiscard]] inline std::vector<Vector> gossip_round(std::span<const Vector> payloads,
                                                      const WeightMatrix& W) {
  const auto n = static_cast<Index>(payloads.size());
  if (W.entries.rows() != n || W.entries.cols() != n)
    throw InvalidArgument("gossip_round: weight matrix does not match agent count");
  if (n == 0) return {};
  const Index len = payloads.front().size();
  for (const auto& p : payloads)
    if (p.size() != len) throw InvalidArgument("gossip_round: payload lengths differ");
  std::vector<Vector> out(n, Vector::Zero(len));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (W.entries(i, j) != 0.0) out[i].noalias() += W.entries(i, j) * payloads[j];
  return out;
}

/// In-place variant over a payload matrix whose columns are agents. Rows of W
/// equal to a unit vector leave the column untouched, so pairwise exchanges
/// only touch the two participating agents.
inline void mix_columns(Matrix& payloads, const WeightMatrix& W) {
  const Index n = payloads.cols();
  if (W.entries.rows() != n || W.entries.cols() != n)
    throw InvalidArgument("mix_columns: weight matrix does not match agent count");
  std::vector<Index> active;
  for (Index i = 0; i < n; ++i) {
    bool unit = W.entries(i, i) == 1.0;
    for (Index j = 0; unit && j < n; ++j)
      if (j != i && W.entries(i, j) != 0.0) unit = false;
    if (!unit) active.push_back(i);
  }
  if (active.empty()) return;
  Matrix mixed(payloads.rows(), static_cast<Index>(active.size()));
  for (std::size_t a = 0; a < active.size(); ++a) {
    const Index i = active[a];
    auto col = mixed.col(static_cast<Index>(a));
    col.setZero();
    for (Index j = 0; j < n; ++j)
      if (W.entries(i, j) != 0.0) col.noalias() += W.entries(i, j) * payloads.col(j);
  }
  for (std::size_t a = 0; a < active.size(); ++a)
    payloads.col(active[a]) = mixed.col(static_cast<Index>(a));
}

/// (1 - eta^{L0})^{1/L0} with L0 = (I - 1) L.
[[nodiscard]] inline double lambda_eta(double eta, int n_agents, int comm_interval) {
  const int L0 = (n_agents - 1) * comm_interval;
  if (L0 < 1) throw InvalidArgument("lambda_eta needs (I - 1) L >= 1");
  if (!(eta > 0.0 && eta < 1.0)) throw InvalidArgument("lambda_eta needs eta in (0, 1)");
  return std::pow(1.0 - std::pow(eta, L0), 1.0 / L0);
}

/// Prefactor 2 (1 + eta^{-L0}) / (1 - eta^{L0}) of the geometric consensus bound.
[[nodiscard]] inline double consensus_prefactor(double eta, int n_agents, int comm_interval) {
  const int L0 = (n_agents - 1) * comm_interval;
  return 2.0 * (1.0 + std::pow(eta, -L0)) / (1.0 - std::pow(eta, L0));
}

struct ProductBoundReport {
  /// Entrywise max |[W_0 ... W_l]_ij - 1/I| for l = 0, 1, ...
  std::vector<double> deviation;
  std::vector<double> bound;
  double max_ratio = 0.0;
  bool assumptions_valid = true;
  bool contracting = true;
  bool satisfied = true;
};

/// Checks the geometric consensus bound on running products of a weight sequence.
[[nodiscard]] inline ProductBoundReport verify_lemma1_bound(std::span<const WeightMatrix> sequence,
                                                      double eta, int n_agents, int comm_interval) {
  ProductBoundReport r;
  if (sequence.empty()) return r;
  const double target = 1.0 / n_agents;
  const int L0 = (n_agents - 1) * comm_interval;
  r.assumptions_valid = eta > 0.0 && eta < 1.0 && L0 >= 1;
  for (const auto& W : sequence) {
    if (!check_doubly_stochastic(W.entries).ok() || W.eta < eta) r.assumptions_valid = false;
  }
  double prefactor = 0.0, rate = 0.0;
  if (r.assumptions_valid) {
    prefactor = consensus_prefactor(eta, n_agents, comm_interval);
    rate = lambda_eta(eta, n_agents, comm_interval);
  }
  Matrix product = Matrix::Identity(n_agents, n_agents);
  for (std::size_t l = 0; l < sequence.size(); ++l) {
    product = product * sequence[l].entries;
    const double dev = (product.array() - target).abs().maxCoeff();
    r.deviation.push_back(dev);
    if (r.assumptions_valid) {
      const double b = prefactor * std::pow(rate, static_cast<double>(l));
      r.bound.push_back(b);
      r.max_ratio = std::max(r.max_ratio, dev / b);
    }
  }
  const double first = r.deviation.front();
  const double last = r.deviation.back();
  r.contracting = last <= 1e-12 || (sequence.size() > 1 && last < first);
  r.satisfied = r.assumptions_valid && r.contracting && r.max_ratio <= 1.0;
  return r;
}

namespace detail {

inline bool union_connected(int n, std::span<const Topology> window) {
  if (n <= 1) return true;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); };
  int components = n;
  for (const auto& t : window) {
    for (auto [a, b] : t.edges) {
      const int ra = find(a), rb = find(b);
      if (ra != rb) {
        parent[ra] = rb;
        --components;
      }
    }
  }
  return components == 1;
}

}  // namespace detail

/// True iff every length-L window of the sequence has a connected union graph.
[[nodiscard]] inline bool check_connectivity(std::span<const Topology> window, int comm_interval) {
  if (comm_interval < 1) throw InvalidArgument("communication interval must be >= 1");
  if (window.size() < static_cast<std::size_t>(comm_interval))
    throw InvalidArgument("connectivity window shorter than L");
  const int n = window.front().n_agents;
  for (std::size_t s = 0; s + comm_interval <= window.size(); ++s) {
    if (!detail::union_connected(n, window.subspan(s, comm_interval))) return false;
  }
  return true;
}

/// Supplies the weight matrix of each successive exchange.
using WeightSource = std::function<WeightMatrix()>;

[[nodiscard]] inline WeightSource fixed_weights(WeightMatrix W) {
  return [W = std::move(W)] { return W; };
}

/// URE source owning its generator, seeded from the config.
[[nodiscard]] inline WeightSource ure_weights(GossipConfig config) {
  auto rng = std::make_shared<std::mt19937_64>(config.rng_seed);
  return [config = std::move(config), rng] { return sample_ure_round(config, *rng); };
}

}  // namespace ggn::gossip
