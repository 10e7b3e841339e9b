#pragma once

// Closed-form convergence constants and trace-driven checks of the bounds
// they imply. Every builder is a pure function of its inputs. When a
// precondition fails, the result carries a flag and a note instead of throwing.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/ggn.hpp"
#include "ggn/gossip.hpp"
#include "ggn/nlls.hpp"

namespace ggn::analysis {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct RecursionConstants {
  double T1 = 0.0;
  double T2 = 0.0;
};

/// T1 = alpha omega / (2 sigma_min), T2 = (1 - alpha) sigma_max / sigma_min + sqrt(2) alpha omega eps_min / sigma_min^2.
[[nodiscard]] inline RecursionConstants recursion_constants(const ProblemConstants& pc, double alpha,
                                                            double epsilon_min) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in (0, 1]");
  const double smin = pc.sigma_min;
  RecursionConstants r;
  r.T1 = alpha * pc.omega / (2.0 * smin);
  r.T2 = (1.0 - alpha) * pc.sigma_max / smin + std::sqrt(2.0) * alpha * pc.omega * epsilon_min / (smin * smin);
  return r;
}

/// Lower end max{1 - 3 sigma_min / sigma_max, 0} of the admissible step-size interval.
[[nodiscard]] inline double admissible_alpha(const ProblemConstants& pc) {
  if (!(pc.sigma_max > 0.0)) return 0.0;
  return std::max(1.0 - 3.0 * pc.sigma_min / pc.sigma_max, 0.0);
}

/// Upper limit sigma_min^2 / (sqrt(2) alpha) [3 - (1 - alpha) sigma_max / sigma_min] on omega * eps_min.
[[nodiscard]] inline double fit_condition_limit(const ProblemConstants& pc, double alpha) {
  return pc.sigma_min * pc.sigma_min / (std::sqrt(2.0) * alpha) *
         (3.0 - (1.0 - alpha) * pc.sigma_max / pc.sigma_min);
}

struct Radii {
  bool defined = false;
  double rho_min = kInf;
  double rho_max = 0.0;
  double discriminant = 0.0;
};

/// Roots of rho = T1 rho^2 + T2 rho + alpha kappa.
[[nodiscard]] inline Radii equilibrium_radii(double T1, double T2, double alpha, double kappa) {
  Radii r;
  r.discriminant = (1.0 - T2) * (1.0 - T2) - 4.0 * alpha * T1 * kappa;
  if (!(T1 > 0.0) || T2 >= 1.0 || r.discriminant < 0.0) return r;
  const double s = std::sqrt(r.discriminant);
  r.defined = true;
  r.rho_min = ((1.0 - T2) - s) / (2.0 * T1);
  r.rho_max = ((1.0 - T2) + s) / (2.0 * T1);
  return r;
}

/// Largest kappa for which the radii exist: (1 - T2)^2 / (4 alpha T1).
[[nodiscard]] inline double kappa_limit(double T1, double T2, double alpha) {
  if (T2 >= 1.0) return 0.0;
  return (1.0 - T2) * (1.0 - T2) / (4.0 * alpha * T1);
}

struct GossipScale {
  bool defined = false;
  bool divergent = false;
  double value = kInf;
  int L0 = 0;
};

/// C = 2 I sigma_max sqrt(I (eps_max^2 + N_u sigma_max^2)) (1 + eta^{-L0}) / (1 - eta^{L0}).
[[nodiscard]] inline GossipScale gossip_error_scale(const ProblemConstants& pc, int n_agents,
                                                    Index n_unknowns, double eta, int comm_interval) {
  GossipScale c;
  c.L0 = (n_agents - 1) * comm_interval;
  if (n_agents < 2 || c.L0 < 1) return c;
  if (!(eta > 0.0 && eta < 1.0)) {
    c.divergent = eta >= 1.0;
    return c;
  }
  const double eL = std::pow(eta, c.L0);
  if (1.0 - eL <= 0.0) {
    c.divergent = true;
    return c;
  }
  const double I = n_agents;
  c.value = 2.0 * I * pc.sigma_max *
            std::sqrt(I * (pc.epsilon_max * pc.epsilon_max +
                           static_cast<double>(n_unknowns) * pc.sigma_max * pc.sigma_max)) *
            (1.0 + 1.0 / eL) / (1.0 - eL);
  c.defined = std::isfinite(c.value);
  c.divergent = !c.defined;
  return c;
}

using ScheduleKind = ExchangeSchedule::Kind;

struct Assumption4Plan {
  double C1 = 0.0;
  double C2 = 0.0;
  double nu = 0.0;
  double D = kInf;
  double lambda_infty = kInf;
  int ell_min = 0;
  /// The exchange schedule keeps lambda_infty finite.
  bool lambda_infty_finite = false;
  /// Constants rest on a finite horizon rather than the infinite sum.
  bool conditional = false;
};

/// ceil(log(xi / 4D) / log lambda), at least 1.
[[nodiscard]] inline int ell_min_for(double xi, double D, double lambda) {
  const double v = std::log(xi / (4.0 * D)) / std::log(lambda);
  // Absorb rounding in the ratio so exact integers are not bumped up.
  const double c = std::ceil(v - 1e-9 * std::max(1.0, std::abs(v)));
  if (!std::isfinite(c)) return std::numeric_limits<int>::max();
  if (c > static_cast<double>(std::numeric_limits<int>::max())) return std::numeric_limits<int>::max();
  return std::max(1, static_cast<int>(c));
}

/// C1, C2, nu, D, lambda_infty and l_min. For a constant schedule the sum
/// defining lambda_infty diverges; with `horizon` K > 0 the finite sum K + 1 is
/// used and the plan is marked conditional.
[[nodiscard]] inline Assumption4Plan assumption4_plan(const ProblemConstants& pc, int n_agents,
                                                      double C, double lambda, double xi,
                                                      ScheduleKind kind, int horizon = 0) {
  if (!(xi > 0.0 && xi < 0.5)) throw InvalidArgument("xi must lie in (0, 1/2)");
  Assumption4Plan p;
  const double s2 = pc.sigma_min * pc.sigma_min;
  p.C1 = 2.0 * (1.0 + pc.sigma_max * pc.epsilon_max / s2);
  p.C2 = static_cast<double>(n_agents) / s2;
  p.nu = std::max(pc.nu_delta, pc.nu_Delta);
  if (kind == ScheduleKind::Incrementing) {
    p.lambda_infty = 1.0 / (1.0 - lambda);
    p.lambda_infty_finite = true;
  } else if (horizon > 0) {
    p.lambda_infty = static_cast<double>(horizon) + 1.0;
    p.conditional = true;
  } else {
    p.conditional = true;
    return p;
  }
  p.D = C * p.C2 * (p.nu * p.lambda_infty * p.C1 * p.C2 + 1.0);
  if (std::isfinite(p.D) && lambda > 0.0 && lambda < 1.0) p.ell_min = ell_min_for(xi, p.D, lambda);
  return p;
}

/// kappa = 4 C1 D lambda^{l_min + 1}.
[[nodiscard]] inline double perturbation_bound(double C1, double D, double lambda, int ell_min) {
  return 4.0 * C1 * D * std::pow(lambda, static_cast<double>(ell_min) + 1.0);
}

struct ConvergenceCertificate {
  double alpha = 0.0;
  double T1 = 0.0;
  double T2 = 0.0;
  double rho_min = kInf;
  double rho_max = 0.0;
  double kappa = kInf;
  double kappa_limit = 0.0;
  double alpha_lower = 0.0;
  double C = kInf;
  double C1 = 0.0;
  double C2 = 0.0;
  double D = kInf;
  double nu = 0.0;
  double eta = 0.0;
  double lambda_eta_val = 1.0;
  int L0 = 0;
  int ell_min = 0;
  double lambda_infty = kInf;
  double xi = 0.25;
  double epsilon_min = 0.0;
  ProblemConstants constants;

  bool estimated_constants = false;
  bool alpha_admissible = false;
  bool fit_condition = false;
  bool radii_defined = false;
  bool kappa_within_limit = false;
  /// lambda_infty comes from a finite horizon.
  bool conditional = false;
  /// Every precondition for the convergence guarantee holds.
  bool applicable = false;
  std::vector<std::string> notes;
};

struct CertificateRequest {
  ProblemConstants constants;
  double alpha = 0.5;
  double epsilon_min = 0.0;
  int n_agents = 1;
  Index n_unknowns = 0;
  double eta = 0.5;
  int comm_interval = 1;
  double xi = 0.25;
  ScheduleKind schedule = ScheduleKind::Constant;
  /// Update horizon used when the schedule makes lambda_infty diverge.
  int horizon = 0;
};

[[nodiscard]] inline ConvergenceCertificate build_certificate(const CertificateRequest& q) {
  ConvergenceCertificate c;
  c.alpha = q.alpha;
  c.xi = q.xi;
  c.eta = q.eta;
  c.epsilon_min = q.epsilon_min;
  c.constants = q.constants;
  c.estimated_constants = q.constants.estimated;
  const auto& pc = q.constants;

  if (!(pc.sigma_min > 0.0)) {
    c.notes.push_back("sigma_min is zero: Jacobian rank deficient on the sampled region");
    c.alpha_lower = admissible_alpha(pc);
    return c;
  }
  const auto rc = recursion_constants(pc, q.alpha, q.epsilon_min);
  c.T1 = rc.T1;
  c.T2 = rc.T2;
  c.alpha_lower = admissible_alpha(pc);
  c.alpha_admissible = q.alpha > c.alpha_lower;
  c.fit_condition = pc.omega * q.epsilon_min < fit_condition_limit(pc, q.alpha);
  c.kappa_limit = kappa_limit(c.T1, c.T2, q.alpha);
  if (!c.alpha_admissible) c.notes.push_back("alpha below the admissible lower bound");
  if (!c.fit_condition) c.notes.push_back("goodness-of-fit condition on omega * epsilon_min fails");
  if (c.T2 >= 1.0) c.notes.push_back("T2 >= 1: no contraction region");

  c.L0 = (q.n_agents - 1) * q.comm_interval;
  if (q.n_agents < 2) {
    // A single agent computes the exact descent, so there is no perturbation.
    c.kappa = 0.0;
    c.notes.push_back("single agent: gossip constants undefined, kappa = 0");
  } else if (!(q.eta > 0.0 && q.eta < 1.0)) {
    c.notes.push_back("eta outside (0, 1): gossip assumptions violated");
  } else {
    c.lambda_eta_val = gossip::lambda_eta(q.eta, q.n_agents, q.comm_interval);
    const auto gs = gossip_error_scale(pc, q.n_agents, q.n_unknowns, q.eta, q.comm_interval);
    c.C = gs.value;
    if (gs.divergent) c.notes.push_back("gossip error scale diverges");
    const auto plan =
        assumption4_plan(pc, q.n_agents, c.C, c.lambda_eta_val, q.xi, q.schedule, q.horizon);
    c.C1 = plan.C1;
    c.C2 = plan.C2;
    c.nu = plan.nu;
    c.D = plan.D;
    c.lambda_infty = plan.lambda_infty;
    c.ell_min = plan.ell_min;
    c.conditional = plan.conditional;
    if (plan.conditional)
      c.notes.push_back(plan.lambda_infty_finite || std::isfinite(plan.lambda_infty)
                            ? "constant schedule: lambda_infty taken over the finite horizon"
                            : "constant schedule: lambda_infty diverges");
    if (std::isfinite(c.D) && c.ell_min > 0)
      c.kappa = perturbation_bound(c.C1, c.D, c.lambda_eta_val, c.ell_min);
  }

  const auto radii = equilibrium_radii(c.T1, c.T2, q.alpha, std::isfinite(c.kappa) ? c.kappa : 0.0);
  c.kappa_within_limit = std::isfinite(c.kappa) && c.kappa < c.kappa_limit;
  if (std::isfinite(c.kappa)) {
    c.radii_defined = radii.defined;
    c.rho_min = radii.rho_min;
    c.rho_max = radii.rho_max;
  }
  if (std::isfinite(c.kappa) && !c.kappa_within_limit && c.T2 < 1.0)
    c.notes.push_back("kappa exceeds (1 - T2)^2 / (4 alpha T1)");
  c.applicable = c.alpha_admissible && c.fit_condition && c.radii_defined && c.kappa_within_limit;
  if (c.estimated_constants) c.notes.push_back("constants estimated by sampling");
  return c;
}

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

/// Flat key=value rendering, one entry per line.
[[nodiscard]] inline std::string to_key_values(const ConvergenceCertificate& c,
                                               const std::string& prefix = "certificate.") {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << prefix << k << '=' << v << '\n'; };
  auto num = [&](const std::string& k, double v) { kv(k, detail::fmt(v)); };
  auto flag = [&](const std::string& k, bool v) { kv(k, v ? "true" : "false"); };
  num("alpha", c.alpha);
  num("epsilon_max", c.constants.epsilon_max);
  num("epsilon_min", c.epsilon_min);
  num("sigma_min", c.constants.sigma_min);
  num("sigma_max", c.constants.sigma_max);
  num("omega", c.constants.omega);
  num("nu_delta", c.constants.nu_delta);
  num("nu_Delta", c.constants.nu_Delta);
  num("T1", c.T1);
  num("T2", c.T2);
  num("alpha_lower", c.alpha_lower);
  num("rho_min", c.rho_min);
  num("rho_max", c.rho_max);
  num("kappa", c.kappa);
  num("kappa_limit", c.kappa_limit);
  num("eta", c.eta);
  num("lambda_eta", c.lambda_eta_val);
  kv("L0", std::to_string(c.L0));
  num("C", c.C);
  num("C1", c.C1);
  num("C2", c.C2);
  num("nu", c.nu);
  num("D", c.D);
  num("lambda_infty", c.lambda_infty);
  kv("ell_min", std::to_string(c.ell_min));
  num("xi", c.xi);
  flag("estimated_constants", c.estimated_constants);
  flag("rank_deficient", c.constants.rank_deficient);
  flag("alpha_admissible", c.alpha_admissible);
  flag("fit_condition", c.fit_condition);
  flag("radii_defined", c.radii_defined);
  flag("kappa_within_limit", c.kappa_within_limit);
  flag("conditional", c.conditional);
  flag("applicable", c.applicable);
  for (std::size_t i = 0; i < c.notes.size(); ++i) kv("note" + std::to_string(i + 1), c.notes[i]);
  return os.str();
}

struct BoundReport {
  std::string bound_name;
  double theoretical_value = 0.0;
  double observed_value = 0.0;
  bool satisfied = false;
  /// theoretical - observed.
  double margin = 0.0;
  /// False when the bound's preconditions do not hold; no claim is made then.
  bool applicable = true;
  long violations = 0;
  long checks = 0;
  std::string note;
};

[[nodiscard]] inline BoundReport make_report(std::string name, double theoretical, double observed,
                                             double rel_tol = 0.0) {
  BoundReport r;
  r.bound_name = std::move(name);
  r.theoretical_value = theoretical;
  r.observed_value = observed;
  r.margin = theoretical - observed;
  r.satisfied = observed <= theoretical * (1.0 + rel_tol);
  r.checks = 1;
  r.violations = r.satisfied ? 0 : 1;
  return r;
}

struct RecursionReport {
  BoundReport initial;
  BoundReport limsup;
  BoundReport recursion;
};

/// Checks a trajectory against the certificate: initial errors inside rho_max,
/// tail errors within rho_min + tol, and the one-step error recursion with the
/// observed discrepancies at every (agent, update).
///
/// `discrepancy[k][i]` is the discrepancy of the step that produced x_i^k
/// (entry 0 is unused). Without discrepancies the recursion is checked with
/// zero perturbation.
[[nodiscard]] inline RecursionReport verify_theorem1(
    std::span<const std::vector<Vector>> iterates, std::span<const std::vector<double>> discrepancy,
    const Vector& x_star, const ConvergenceCertificate& cert, double tail_tol = 0.0) {
  RecursionReport rep;
  if (iterates.empty()) return rep;
  const std::size_t n_agents = iterates.front().size();

  double e0 = 0.0;
  for (const auto& x : iterates.front()) e0 = std::max(e0, (x - x_star).norm());
  rep.initial = make_report("initial_error_within_rho_max", cert.rho_max, e0);
  rep.initial.satisfied = cert.radii_defined && e0 < cert.rho_max;
  rep.initial.violations = rep.initial.satisfied ? 0 : 1;
  if (!cert.radii_defined) {
    rep.initial.applicable = false;
    rep.initial.note = "equilibrium radii undefined";
  } else if (!rep.initial.satisfied) {
    rep.initial.note = "initial iterate outside rho_max: precondition unmet";
  }

  const std::size_t tail_start = iterates.size() - std::max<std::size_t>(1, iterates.size() / 4);
  double tail = 0.0;
  for (std::size_t k = tail_start; k < iterates.size(); ++k)
    for (const auto& x : iterates[k]) tail = std::max(tail, (x - x_star).norm());
  rep.limsup = make_report("tail_error_within_rho_min", cert.rho_min + tail_tol, tail);
  rep.limsup.applicable = cert.applicable && rep.initial.satisfied;
  if (!rep.limsup.applicable) rep.limsup.note = "guarantee preconditions unmet";

  BoundReport& rr = rep.recursion;
  rr.bound_name = "error_recursion";
  rr.satisfied = true;
  rr.margin = kInf;
  double worst_ratio = 0.0;
  for (std::size_t k = 0; k + 1 < iterates.size(); ++k) {
    for (std::size_t i = 0; i < n_agents; ++i) {
      const double ek = (iterates[k][i] - x_star).norm();
      const double ek1 = (iterates[k + 1][i] - x_star).norm();
      double disc = 0.0;
      if (k + 1 < discrepancy.size() && i < discrepancy[k + 1].size()) disc = discrepancy[k + 1][i];
      const double rhs = cert.T1 * ek * ek + cert.T2 * ek + cert.alpha * disc;
      ++rr.checks;
      // Rounding slack at the level of the operands only.
      const double slack = 1e-12 * (1.0 + rhs);
      if (ek1 > rhs + slack) {
        ++rr.violations;
        rr.satisfied = false;
      }
      rr.margin = std::min(rr.margin, rhs - ek1);
      if (rhs > 0.0) worst_ratio = std::max(worst_ratio, ek1 / rhs);
    }
  }
  rr.observed_value = worst_ratio;
  rr.theoretical_value = 1.0;
  return rep;
}

/// Stacked gossip errors of every update against C lambda^{l_k}.
[[nodiscard]] inline BoundReport gossip_error_check(const GgnTrajectory& traj, double C, double lambda,
                                              const ExchangeSchedule& schedule) {
  BoundReport r;
  r.bound_name = "gossip_error_scale";
  r.satisfied = true;
  r.applicable = std::isfinite(C) && lambda > 0.0 && lambda < 1.0;
  double worst = 0.0;
  for (std::size_t k = 1; k < traj.records.size(); ++k) {
    const auto& rec = traj.records[k];
    if (rec.gossip_error_h.empty()) continue;
    const double bound = C * std::pow(lambda, schedule(rec.k));
    const double obs = std::max(rec.gossip_error_h.back(), rec.gossip_error_H.back());
    ++r.checks;
    if (!(obs < bound)) {
      ++r.violations;
      r.satisfied = false;
    }
    worst = std::max(worst, obs / bound);
  }
  r.observed_value = worst;
  r.theoretical_value = 1.0;
  r.margin = 1.0 - worst;
  return r;
}

/// Max pairwise disagreement after K updates against 4 C C1 C2 sum_k lambda^{l_k + 1}.
[[nodiscard]] inline BoundReport disagreement_check(const GgnTrajectory& traj, double C, double C1, double C2,
                                              double lambda, const ExchangeSchedule& schedule) {
  BoundReport r;
  r.bound_name = "iterate_disagreement";
  r.satisfied = true;
  r.applicable = std::isfinite(C) && lambda > 0.0 && lambda < 1.0;
  double sum = 0.0, worst = 0.0;
  for (std::size_t K = 1; K < traj.records.size(); ++K) {
    sum += std::pow(lambda, schedule(static_cast<int>(K)) + 1.0);
    const double bound = 4.0 * C * C1 * C2 * sum;
    const double obs = traj.records[K].max_disagreement;
    ++r.checks;
    if (obs > bound) {
      ++r.violations;
      r.satisfied = false;
    }
    worst = std::max(worst, obs / bound);
  }
  r.observed_value = worst;
  r.theoretical_value = 1.0;
  r.margin = 1.0 - worst;
  return r;
}

struct SurrogateMismatch {
  std::vector<double> delta;
  std::vector<double> Delta;
  std::vector<double> delta_bound;
  std::vector<double> Delta_bound;

  [[nodiscard]] bool within_bounds(double rel_tol = 1e-12) const {
    for (std::size_t i = 0; i < delta.size(); ++i) {
      if (delta[i] > delta_bound[i] * (1.0 + rel_tol) + 1e-15) return false;
      if (Delta[i] > Delta_bound[i] * (1.0 + rel_tol) + 1e-15) return false;
    }
    return true;
  }
};

/// delta_i = hbar - q(x_i) and Delta_i = Hbar - Q(x_i) with q, Q the site
/// averages evaluated at one common point, and their Lipschitz bounds
/// (nu / I) sum_j ||x_i - x_j||. Delta is measured in the spectral norm.
[[nodiscard]] inline SurrogateMismatch surrogate_mismatch(std::span<const SiteModel> sites,
                                                          std::span<const Vector> xs,
                                                          const ProblemConstants& pc) {
  const std::size_t I = sites.size();
  if (xs.size() != I) throw InvalidArgument("surrogate_mismatch needs one iterate per site");
  const Index n = xs.front().size();
  const double inv = 1.0 / static_cast<double>(I);

  Vector hbar = Vector::Zero(n);
  Matrix Hbar = Matrix::Zero(n, n);
  for (std::size_t j = 0; j < I; ++j) {
    const auto info = local_init_info(sites[j], xs[j]);
    hbar += inv * info.h;
    Hbar += inv * info.H;
  }
  SurrogateMismatch m;
  for (std::size_t i = 0; i < I; ++i) {
    Vector q = Vector::Zero(n);
    Matrix Q = Matrix::Zero(n, n);
    for (std::size_t j = 0; j < I; ++j) {
      const auto info = local_init_info(sites[j], xs[i]);
      q += inv * info.h;
      Q += inv * info.H;
    }
    double spread = 0.0;
    for (std::size_t j = 0; j < I; ++j) spread += (xs[i] - xs[j]).norm();
    m.delta.push_back((hbar - q).norm());
    m.Delta.push_back(ggn::detail::spectral_norm(Hbar - Q));
    m.delta_bound.push_back(pc.nu_delta * inv * spread);
    m.Delta_bound.push_back(pc.nu_Delta * inv * spread);
  }
  return m;
}

}  // namespace ggn::analysis
