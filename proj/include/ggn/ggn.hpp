#pragma once

// Gossip-based Gauss-Newton: every update, each agent linearizes its own site
// at its own iterate, the agents gossip the information vectors [h; vec(H)]
// for l_k exchanges, and each agent steps along its gossiped descent.
// A first-order gossip-gradient method is included as a baseline.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/gossip.hpp"
#include "ggn/nlls.hpp"

namespace ggn {

struct InfoVector {
  Vector h;
  Matrix H;

  [[nodiscard]] Index dim() const { return h.size(); }

  /// Payload length N_u (N_u + 1).
  [[nodiscard]] static Index payload_size(Index n) { return n * (n + 1); }

  /// [h; vec(H)] with H stored column-major.
  [[nodiscard]] Vector to_payload() const {
    const Index n = dim();
    Vector p(payload_size(n));
    p.head(n) = h;
    p.tail(n * n) = Eigen::Map<const Vector>(H.data(), n * n);
    return p;
  }

  [[nodiscard]] static InfoVector from_payload(const Eigen::Ref<const Vector>& p, Index n) {
    if (p.size() != payload_size(n)) throw InvalidArgument("payload length does not match N_u");
    InfoVector v;
    v.h = p.head(n);
    v.H = Eigen::Map<const Matrix>(p.tail(n * n).data(), n, n);
    return v;
  }
};

struct AgentState {
  int agent_id = 0;
  Vector x;
  InfoVector info;
  Vector last_descent;
};

/// h = G_i^T g_i and H = G_i^T G_i at the agent's own iterate.
[[nodiscard]] inline InfoVector info_from_linearization(const Vector& g, const Matrix& G) {
  const Index n = G.cols();
  InfoVector v{Vector::Zero(n), Matrix::Zero(n, n)};
  v.H.selfadjointView<Eigen::Lower>().rankUpdate(G.transpose());
  v.H = v.H.selfadjointView<Eigen::Lower>();
  v.h.noalias() += G.transpose() * g;
  return v;
}

[[nodiscard]] inline InfoVector local_init_info(const SiteModel& site, const Vector& x) {
  return info_from_linearization(site.eval_residual(x), site.eval_jacobian(x));
}

/// Diagonal shift ridge_scale * trace(H) / N_u applied before inversion.
[[nodiscard]] inline double ridge_for(const Matrix& H, double ridge_scale) {
  if (ridge_scale == 0.0 || H.rows() == 0) return 0.0;
  return ridge_scale * H.trace() / static_cast<double>(H.rows());
}

/// d = (H + ridge I)^{-1} h, then x <- P[x - alpha d].
inline void local_update(AgentState& agent, double alpha, const BoxSet& box, double ridge,
                         double condition_cap = kDefaultConditionCap) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("step-size must lie in (0, 1]");
  Matrix H = agent.info.H;
  if (ridge != 0.0) H.diagonal().array() += ridge;
  agent.last_descent = solve_normal_equations(H, agent.info.h, condition_cap, agent.agent_id);
  agent.x = project(agent.x - alpha * agent.last_descent, box);
}

/// Number of exchanges l_k before update k (k = 1, 2, ...).
struct ExchangeSchedule {
  enum class Kind { Constant, Incrementing };
  Kind kind = Kind::Constant;
  int ell_min = 3;

  [[nodiscard]] int operator()(int k) const {
    if (ell_min < 1) throw InvalidArgument("exchanges per update must be >= 1");
    return kind == Kind::Constant ? ell_min : ell_min + (k - 1);
  }
};

struct GgnConfig {
  double alpha = 0.5;
  ExchangeSchedule schedule;
  int max_updates = 50;
  double stop_tol = 1e-10;
  double ridge_scale = 1e-8;
  double condition_cap = kDefaultConditionCap;
  /// Evaluate ||d_i(l_k) - d_i|| against the exact descent at every update.
  bool record_discrepancy = false;
  /// Keep the stacked gossip errors after every exchange, not just the last.
  bool record_gossip_trace = false;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in (0, 1]");
    if (schedule.ell_min < 1) throw InvalidArgument("exchanges per update must be >= 1");
    if (max_updates < 0) throw InvalidArgument("max_updates must be >= 0");
    if (!(stop_tol > 0.0)) throw InvalidArgument("stop tolerance must be positive");
    if (!(ridge_scale >= 0.0)) throw InvalidArgument("ridge scale must be nonnegative");
  }
};

/// State of the network after update k (k = 0 is the initial state).
struct UpdateRecord {
  int k = 0;
  /// Exchanges performed since the start of the run.
  long exchanges = 0;
  std::vector<Vector> x;
  /// ||g_i(x_i)||^2 per agent.
  std::vector<double> val;
  /// ||G_i^T(x_i) g_i(x_i)|| per agent.
  std::vector<double> grad;
  /// ||x_i^k - x_i^{k-1}|| per agent.
  std::vector<double> step_norm;
  /// ||d_i(l_k) - d_i|| of the step that produced x^k; empty unless recorded.
  std::vector<double> discrepancy;
  double max_disagreement = 0.0;
  /// Stacked ||e_k(l)|| and ||E_k(l)||_F for l = 0..l_k (last entry only unless traced).
  std::vector<double> gossip_error_h;
  std::vector<double> gossip_error_H;
  /// Smallest nonzero mixing weight seen during this update's exchanges.
  double eta = 1.0;
  /// Ridge applied per agent.
  std::vector<double> ridge;
};

struct GgnTrajectory {
  std::vector<UpdateRecord> records;
  bool stopped_early = false;
  long total_exchanges = 0;
  /// Smallest nonzero mixing weight over the whole run.
  double eta = 1.0;
  /// Exchanges whose matrix was the identity (failed link or no edges).
  long identity_exchanges = 0;

  [[nodiscard]] const std::vector<Vector>& final_iterates() const { return records.back().x; }
};

[[nodiscard]] inline double max_pairwise_distance(std::span<const Vector> xs) {
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) d = std::max(d, (xs[i] - xs[j]).norm());
  return d;
}

/// ||d_i - exact_descent(sites, x_i)|| per agent.
[[nodiscard]] inline std::vector<double> descent_discrepancy(std::span<const SiteModel> sites,
                                                             std::span<const AgentState> agents,
                                                             double ridge_scale,
                                                             double condition_cap = kDefaultConditionCap) {
  std::vector<double> out;
  out.reserve(agents.size());
  for (const auto& a : agents) {
    Matrix H = a.info.H;
    const double ridge = ridge_for(H, ridge_scale);
    if (ridge != 0.0) H.diagonal().array() += ridge;
    const Vector d = solve_normal_equations(H, a.info.h, condition_cap, a.agent_id);
    out.push_back((d - exact_descent(sites, a.x, condition_cap)).norm());
  }
  return out;
}

namespace detail {

/// Stacked deviation of the payload columns from their mean, split into the h
/// part and the vec(H) part.
inline std::pair<double, double> gossip_errors(const Matrix& payloads, Index n) {
  const Vector mean = payloads.rowwise().mean();
  double eh = 0.0, eH = 0.0;
  for (Index i = 0; i < payloads.cols(); ++i) {
    eh += (payloads.col(i).head(n) - mean.head(n)).squaredNorm();
    eH += (payloads.col(i).tail(n * n) - mean.tail(n * n)).squaredNorm();
  }
  return {std::sqrt(eh), std::sqrt(eH)};
}

struct Linearization {
  std::vector<Vector> g;
  std::vector<Matrix> G;
};

inline Linearization linearize(std::span<const SiteModel> sites, std::span<const Vector> xs) {
  Linearization lin;
  lin.g.reserve(sites.size());
  lin.G.reserve(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    lin.g.push_back(sites[i].eval_residual(xs[i]));
    lin.G.push_back(sites[i].eval_jacobian(xs[i]));
  }
  return lin;
}

inline void fill_site_metrics(UpdateRecord& rec, const Linearization& lin) {
  const std::size_t n = lin.g.size();
  rec.val.resize(n);
  rec.grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    rec.val[i] = lin.g[i].squaredNorm();
    rec.grad[i] = (lin.G[i].transpose() * lin.g[i]).norm();
  }
  rec.max_disagreement = max_pairwise_distance(rec.x);
}

}  // namespace detail

/// Runs the algorithm with one site per agent, starting each agent from its
/// own entry of `x0`. `weights` supplies the mixing matrix of every exchange
/// and is advanced in place, so a caller can continue the same random stream
/// across consecutive runs.
[[nodiscard]] inline GgnTrajectory ggn_run(std::span<const SiteModel> sites, const BoxSet& box,
                                           gossip::WeightSource& weights, const GgnConfig& config,
                                           std::span<const Vector> x0) {
  config.validate();
  box.validate();
  const auto n_agents = static_cast<Index>(sites.size());
  if (n_agents < 1) throw InvalidArgument("ggn_run needs at least one site");
  if (static_cast<Index>(x0.size()) != n_agents)
    throw InvalidArgument("ggn_run needs one initial iterate per agent");
  const Index n = box.dim();
  for (const auto& x : x0)
    if (x.size() != n) throw InvalidArgument("initial iterate does not match the box dimension");

  std::vector<AgentState> agents(n_agents);
  for (Index i = 0; i < n_agents; ++i) {
    agents[i].agent_id = static_cast<int>(i);
    agents[i].x = x0[i];
  }

  GgnTrajectory traj;
  UpdateRecord rec0;
  rec0.x.assign(x0.begin(), x0.end());
  rec0.step_norm.assign(n_agents, 0.0);
  auto lin = detail::linearize(sites, rec0.x);
  detail::fill_site_metrics(rec0, lin);
  traj.records.push_back(std::move(rec0));

  const Index payload_len = InfoVector::payload_size(n);
  Matrix payloads(payload_len, n_agents);
  for (int k = 1; k <= config.max_updates; ++k) {
    for (Index i = 0; i < n_agents; ++i)
      payloads.col(i) = info_from_linearization(lin.g[i], lin.G[i]).to_payload();

    UpdateRecord rec;
    rec.k = k;
    const int ell = config.schedule(k);
    if (config.record_gossip_trace) {
      const auto [eh, eH] = detail::gossip_errors(payloads, n);
      rec.gossip_error_h.push_back(eh);
      rec.gossip_error_H.push_back(eH);
    }
    double eta = std::numeric_limits<double>::infinity();
    for (int l = 0; l < ell; ++l) {
      const gossip::WeightMatrix W = weights();
      if (W.size() != n_agents) throw InvalidArgument("weight matrix does not match agent count");
      if (W.identity_fallback) ++traj.identity_exchanges;
      eta = std::min(eta, W.eta);
      gossip::mix_columns(payloads, W);
      if (config.record_gossip_trace || l + 1 == ell) {
        const auto [eh, eH] = detail::gossip_errors(payloads, n);
        rec.gossip_error_h.push_back(eh);
        rec.gossip_error_H.push_back(eH);
      }
    }
    traj.total_exchanges += ell;
    rec.exchanges = traj.total_exchanges;
    rec.eta = eta;
    traj.eta = std::min(traj.eta, eta);

    rec.ridge.resize(n_agents);
    rec.step_norm.resize(n_agents);
    double max_step = 0.0;
    for (Index i = 0; i < n_agents; ++i) {
      agents[i].info = InfoVector::from_payload(payloads.col(i), n);
      rec.ridge[i] = ridge_for(agents[i].info.H, config.ridge_scale);
      const Vector before = agents[i].x;
      if (config.record_discrepancy) {
        // Exact descent at the pre-update iterate.
        Matrix H = agents[i].info.H;
        if (rec.ridge[i] != 0.0) H.diagonal().array() += rec.ridge[i];
        const Vector d = solve_normal_equations(H, agents[i].info.h, config.condition_cap,
                                                agents[i].agent_id);
        rec.discrepancy.push_back((d - exact_descent(sites, before, config.condition_cap)).norm());
      }
      local_update(agents[i], config.alpha, box, rec.ridge[i], config.condition_cap);
      rec.step_norm[i] = (agents[i].x - before).norm();
      max_step = std::max(max_step, rec.step_norm[i]);
    }

    rec.x.resize(n_agents);
    for (Index i = 0; i < n_agents; ++i) rec.x[i] = agents[i].x;
    lin = detail::linearize(sites, rec.x);
    detail::fill_site_metrics(rec, lin);
    traj.records.push_back(std::move(rec));
    if (max_step <= config.stop_tol) {
      traj.stopped_early = k < config.max_updates;
      break;
    }
  }
  if (!std::isfinite(traj.eta)) traj.eta = 1.0;
  return traj;
}

/// Same starting point for every agent.
[[nodiscard]] inline GgnTrajectory ggn_run(std::span<const SiteModel> sites, const BoxSet& box,
                                           gossip::WeightSource& weights, const GgnConfig& config,
                                           const Vector& x0) {
  std::vector<Vector> starts(sites.size(), x0);
  return ggn_run(sites, box, weights, config, std::span<const Vector>(starts));
}

/// Centralized undamped Gauss-Newton iterates x^0, x^1, ... stopping on the step norm.
[[nodiscard]] inline std::vector<Vector> centralized_run(std::span<const SiteModel> sites,
                                                         const BoxSet& box, double alpha,
                                                         const Vector& x0, int max_updates,
                                                         double stop_tol,
                                                         double condition_cap = kDefaultConditionCap) {
  std::vector<Vector> xs{x0};
  for (int k = 0; k < max_updates; ++k) {
    xs.push_back(centralized_gn_step(sites, xs.back(), alpha, box, condition_cap));
    if ((xs.back() - xs[xs.size() - 2]).norm() <= stop_tol) break;
  }
  return xs;
}

/// Step-size alpha_l of the diffusion baseline at exchange l = 1, 2, ...
struct StepSchedule {
  enum class Kind { Constant, Diminishing };
  Kind kind = Kind::Diminishing;
  double c = 0.3;

  [[nodiscard]] double operator()(long ell) const {
    return kind == Kind::Constant ? c : c / static_cast<double>(ell);
  }
};

/// One record per exchange; `exchanges` = 0 holds the initial state.
struct DiffusionRecord {
  long exchanges = 0;
  std::vector<Vector> x;
  std::vector<double> val;
  std::vector<double> grad;
  double max_disagreement = 0.0;
};

/// x_i <- P[sum_j W_ij x_j - alpha_l G_i^T(x_i) g_i(x_i)] once per exchange.
[[nodiscard]] inline std::vector<DiffusionRecord> diffusion_baseline_run(
    std::span<const SiteModel> sites, const BoxSet& box, gossip::WeightSource& weights,
    const StepSchedule& steps, long total_exchanges, const Vector& x0) {
  box.validate();
  const auto n_agents = static_cast<Index>(sites.size());
  if (n_agents < 1) throw InvalidArgument("diffusion baseline needs at least one site");
  if (steps.c < 0.0) throw InvalidArgument("diffusion step-size must be nonnegative");
  if (x0.size() != box.dim()) throw InvalidArgument("initial iterate does not match the box dimension");

  const Index n = box.dim();
  Matrix X(n, n_agents);
  for (Index i = 0; i < n_agents; ++i) X.col(i) = x0;

  auto record = [&](long ell, std::vector<Vector>* grads) {
    DiffusionRecord r;
    r.exchanges = ell;
    r.x.resize(n_agents);
    r.val.resize(n_agents);
    r.grad.resize(n_agents);
    for (Index i = 0; i < n_agents; ++i) {
      r.x[i] = X.col(i);
      const Vector g = sites[i].eval_residual(r.x[i]);
      const Vector gi = sites[i].eval_jacobian(r.x[i]).transpose() * g;
      r.val[i] = g.squaredNorm();
      r.grad[i] = gi.norm();
      if (grads) (*grads)[i] = gi;
    }
    r.max_disagreement = max_pairwise_distance(r.x);
    return r;
  };

  std::vector<Vector> grads(n_agents);
  std::vector<DiffusionRecord> out;
  out.push_back(record(0, &grads));
  for (long ell = 1; ell <= total_exchanges; ++ell) {
    const gossip::WeightMatrix W = weights();
    if (W.size() != n_agents) throw InvalidArgument("weight matrix does not match agent count");
    gossip::mix_columns(X, W);
    const double a = steps(ell);
    for (Index i = 0; i < n_agents; ++i) X.col(i) = project(X.col(i) - a * grads[i], box);
    out.push_back(record(ell, &grads));
  }
  return out;
}

}  // namespace ggn
