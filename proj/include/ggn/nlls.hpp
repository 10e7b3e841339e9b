#pragma once

// Nonlinear least-squares building blocks: the per-site problem abstraction,
// box constraints, the centralized (undamped) Gauss-Newton iteration and the
// numerical oracles used to check them.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ggn/errors.hpp"

namespace ggn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Default cap on the condition estimate of a Gauss-Newton normal matrix.
inline constexpr double kDefaultConditionCap = 1e12;

/// Compact box constraint set with componentwise bounds.
struct BoxSet {
  Vector lower;
  Vector upper;

  [[nodiscard]] Index dim() const { return lower.size(); }

  [[nodiscard]] bool contains(const Vector& x, double tol = 0.0) const {
    if (x.size() != lower.size()) return false;
    for (Index i = 0; i < x.size(); ++i) {
      if (x[i] < lower[i] - tol || x[i] > upper[i] + tol) return false;
    }
    return true;
  }

  void validate() const {
    if (lower.size() != upper.size()) throw InvalidArgument("box bounds differ in length");
    for (Index i = 0; i < lower.size(); ++i) {
      if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
        throw InvalidArgument("box bounds must be finite");
      if (lower[i] > upper[i]) throw InvalidArgument("box lower bound exceeds upper bound");
    }
  }
};

/// One agent's residual g_i and Jacobian G_i = dg_i/dx over the shared state.
struct SiteModel {
  int site_id = 0;
  Index residual_dim = 0;
  std::function<Vector(const Vector&)> eval_residual;
  std::function<Matrix(const Vector&)> eval_jacobian;
};

/// Assumption quantities of the NLLS problem, estimated or supplied.
struct ProblemConstants {
  double epsilon_max = 0.0;
  double epsilon_min = 0.0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  double omega = 0.0;
  double nu_delta = 0.0;
  double nu_Delta = 0.0;
  /// Set when some sampled Jacobian was numerically rank deficient.
  bool rank_deficient = false;
  /// Constants come from sampling, so they are brackets rather than exact values.
  bool estimated = false;

  /// Lipschitz constants of the per-site information terms. For G^T g the
  /// product rule gives omega eps_max + sigma_max^2; the value never drops
  /// below omega (eps_max + sigma_max).
  void set_derived_lipschitz() {
    nu_delta = std::max(omega * (epsilon_max + sigma_max),
                        omega * epsilon_max + sigma_max * sigma_max);
    nu_Delta = 2.0 * sigma_max * omega;
  }
};

/// Euclidean projection onto the box (componentwise clamp).
[[nodiscard]] inline Vector project(const Vector& x, const BoxSet& box) {
  if (x.size() != box.dim())
    throw InvalidArgument("project: state has length " + std::to_string(x.size()) +
                          ", box has " + std::to_string(box.dim()));
  return x.cwiseMax(box.lower).cwiseMin(box.upper);
}

/// Solves H d = h with a column-pivoted QR of H. The ratio |R_00| / |R_nn| of the
/// pivoted triangular factor serves as the condition estimate.
[[nodiscard]] inline Vector solve_normal_equations(const Matrix& H, const Vector& h,
                                                   double condition_cap = kDefaultConditionCap,
                                                   int agent_id = -1) {
  if (H.rows() != H.cols() || H.rows() != h.size())
    throw InvalidArgument("normal equations: dimension mismatch");
  if (H.rows() == 0) return Vector(0);
  Eigen::ColPivHouseholderQR<Matrix> qr(H);
  const auto& R = qr.matrixR();
  const double top = std::abs(R(0, 0));
  const double bottom = std::abs(R(H.rows() - 1, H.rows() - 1));
  const double cond = bottom > 0.0 ? top / bottom : std::numeric_limits<double>::infinity();
  if (!(cond <= condition_cap)) {
    std::string who = agent_id >= 0 ? " (agent " + std::to_string(agent_id) + ")" : "";
    throw SingularSystem("normal matrix is singular or ill-conditioned" + who +
                             ": condition estimate " + std::to_string(cond),
                         cond, agent_id);
  }
  return qr.solve(h);
}

/// Normal-equation terms summed over sites: sum G_i^T G_i and sum G_i^T g_i.
struct NormalTerms {
  Matrix H;
  Vector h;
};

[[nodiscard]] inline NormalTerms accumulate_normal_terms(std::span<const SiteModel> sites,
                                                         const Vector& x) {
  const Index n = x.size();
  NormalTerms t{Matrix::Zero(n, n), Vector::Zero(n)};
  for (const auto& s : sites) {
    const Vector g = s.eval_residual(x);
    const Matrix G = s.eval_jacobian(x);
    t.H.selfadjointView<Eigen::Lower>().rankUpdate(G.transpose());
    t.h.noalias() += G.transpose() * g;
  }
  t.H = t.H.selfadjointView<Eigen::Lower>();
  return t;
}

/// Exact Gauss-Newton descent d = (G^T G)^{-1} G^T g from all sites' contributions.
[[nodiscard]] inline Vector exact_descent(std::span<const SiteModel> sites, const Vector& x,
                                          double condition_cap = kDefaultConditionCap) {
  const auto t = accumulate_normal_terms(sites, x);
  return solve_normal_equations(t.H, t.h, condition_cap);
}

/// One undamped Gauss-Newton step P[x - alpha d].
[[nodiscard]] inline Vector centralized_gn_step(std::span<const SiteModel> sites, const Vector& x,
                                                double alpha, const BoxSet& box,
                                                double condition_cap = kDefaultConditionCap) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("step-size must lie in (0, 1]");
  return project(x - alpha * exact_descent(sites, x, condition_cap), box);
}

/// ||G^T(x) g(x)||, zero exactly at first-order stationary points.
[[nodiscard]] inline double stationarity_residual(std::span<const SiteModel> sites,
                                                  const Vector& x) {
  Vector grad = Vector::Zero(x.size());
  for (const auto& s : sites) grad.noalias() += s.eval_jacobian(x).transpose() * s.eval_residual(x);
  return grad.norm();
}

/// Sum of squared residuals over all sites.
[[nodiscard]] inline double objective(std::span<const SiteModel> sites, const Vector& x) {
  double v = 0.0;
  for (const auto& s : sites) v += s.eval_residual(x).squaredNorm();
  return v;
}

/// Central-difference Jacobian of a site's residual.
[[nodiscard]] inline Matrix finite_diff_jacobian(const SiteModel& site, const Vector& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite difference step must be positive");
  Matrix J(site.residual_dim, x.size());
  Vector xp = x;
  for (Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + h;
    const Vector fp = site.eval_residual(xp);
    xp[j] = x[j] - h;
    const Vector fm = site.eval_residual(xp);
    xp[j] = x[j];
    J.col(j) = (fp - fm) / (2.0 * h);
  }
  return J;
}

/// Stacked residual of all sites.
[[nodiscard]] inline Vector stacked_residual(std::span<const SiteModel> sites, const Vector& x) {
  Index m = 0;
  for (const auto& s : sites) m += s.residual_dim;
  Vector g(m);
  Index row = 0;
  for (const auto& s : sites) {
    g.segment(row, s.residual_dim) = s.eval_residual(x);
    row += s.residual_dim;
  }
  return g;
}

/// Stacked Jacobian of all sites.
[[nodiscard]] inline Matrix stacked_jacobian(std::span<const SiteModel> sites, const Vector& x) {
  Index m = 0;
  for (const auto& s : sites) m += s.residual_dim;
  Matrix G(m, x.size());
  Index row = 0;
  for (const auto& s : sites) {
    G.middleRows(row, s.residual_dim) = s.eval_jacobian(x);
    row += s.residual_dim;
  }
  return G;
}

namespace detail {

inline double spectral_norm(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  const Matrix AtA = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Matrix> es(AtA, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(es.eigenvalues().maxCoeff(), 0.0));
}

}  // namespace detail

/// Sampling-based estimate of the problem constants over a box.
///
/// Samples are drawn uniformly and sequentially from a generator seeded with
/// `rng_seed`, so a larger sample count always extends the smaller sample set.
/// The resulting epsilon_max and omega are lower bounds of the true suprema and
/// [sigma_min, sigma_max] is an inner bracket of the true singular-value range.
[[nodiscard]] inline ProblemConstants estimate_constants(std::span<const SiteModel> sites,
                                                         const BoxSet& box, int n_samples,
                                                         std::uint64_t rng_seed) {
  if (n_samples < 2) throw InvalidArgument("estimate_constants needs at least two samples");
  box.validate();
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Vector> xs;
  std::vector<Matrix> Gs;
  xs.reserve(n_samples);
  Gs.reserve(n_samples);

  ProblemConstants pc;
  pc.estimated = true;
  pc.sigma_min = std::numeric_limits<double>::infinity();
  for (int s = 0; s < n_samples; ++s) {
    Vector x(box.dim());
    for (Index i = 0; i < x.size(); ++i)
      x[i] = box.lower[i] + unit(rng) * (box.upper[i] - box.lower[i]);
    const Vector g = stacked_residual(sites, x);
    Matrix G = stacked_jacobian(sites, x);
    pc.epsilon_max = std::max(pc.epsilon_max, g.norm());

    Eigen::SelfAdjointEigenSolver<Matrix> es(G.transpose() * G, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    // Same threshold as the condition cap on G^T G.
    if (lmin <= lmax / kDefaultConditionCap) pc.rank_deficient = true;
    pc.sigma_min = std::min(pc.sigma_min, std::sqrt(std::max(lmin, 0.0)));
    pc.sigma_max = std::max(pc.sigma_max, std::sqrt(std::max(lmax, 0.0)));

    xs.push_back(std::move(x));
    Gs.push_back(std::move(G));
  }
  if (pc.rank_deficient) pc.sigma_min = 0.0;

  for (int a = 0; a < n_samples; ++a) {
    for (int b = a + 1; b < n_samples; ++b) {
      const double dx = (xs[a] - xs[b]).norm();
      if (dx <= 0.0) continue;
      pc.omega = std::max(pc.omega, detail::spectral_norm(Gs[a] - Gs[b]) / dx);
    }
  }
  pc.set_derived_lipschitz();
  return pc;
}

}  // namespace ggn
