#pragma once

// State-estimation instance: which measurements each site holds, noisy
// measurement snapshots, and the per-site least-squares residuals.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/nlls.hpp"
#include "ggn/psse/network.hpp"

namespace ggn::psse {

struct MeasurementPlan {
  /// Buses covered by each site.
  std::vector<std::vector<int>> buses;
  /// Measurement rows held by each site, ascending.
  std::vector<std::vector<Index>> rows;

  [[nodiscard]] int n_sites() const { return static_cast<int>(rows.size()); }
  [[nodiscard]] Index total_measurements() const {
    Index m = 0;
    for (const auto& r : rows) m += static_cast<Index>(r.size());
    return m;
  }
};

/// Site holding bus n when N buses are split into I contiguous groups.
[[nodiscard]] inline int site_of_bus(int n, int n_buses, int n_sites) {
  return static_cast<int>(static_cast<long>(n) * n_sites / n_buses);
}

/// Contiguous bus groups; each site takes its buses' injections and all four
/// flow entries of every line whose lower-numbered endpoint site is its own.
[[nodiscard]] inline MeasurementPlan partition_sites(const PsseModel& model, int n_sites) {
  const int N = model.n_buses();
  if (n_sites < 1 || n_sites > N) throw InvalidArgument("number of sites must lie in [1, N]");
  const int L = model.n_lines();
  MeasurementPlan plan;
  plan.buses.resize(n_sites);
  plan.rows.resize(n_sites);
  for (int n = 0; n < N; ++n) {
    const int i = site_of_bus(n, N, n_sites);
    plan.buses[i].push_back(n);
    plan.rows[i].push_back(n);
    plan.rows[i].push_back(N + n);
  }
  for (int l = 0; l < L; ++l) {
    const auto& p = model.lines()[l];
    const int i = std::min(site_of_bus(p.from, N, n_sites), site_of_bus(p.to, N, n_sites));
    for (int dir = 0; dir < 2; ++dir) {
      plan.rows[i].push_back(2 * N + 2 * l + dir);
      plan.rows[i].push_back(2 * N + 2 * L + 2 * l + dir);
    }
  }
  for (auto& r : plan.rows) std::sort(r.begin(), r.end());
  return plan;
}

/// Checks disjoint bus sets and valid, duplicate-free rows.
inline void validate_plan(const PsseModel& model, const MeasurementPlan& plan) {
  std::vector<int> owner(model.n_buses(), -1);
  for (int i = 0; i < static_cast<int>(plan.buses.size()); ++i)
    for (int n : plan.buses[i]) {
      if (n < 0 || n >= model.n_buses()) throw InvalidArgument("plan bus out of range");
      if (owner[n] >= 0) throw InvalidArgument("bus assigned to two sites");
      owner[n] = i;
    }
  for (const auto& r : plan.rows) {
    std::vector<Index> sorted(r);
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw InvalidArgument("site selects a measurement twice");
    for (Index row : r)
      if (row < 0 || row >= model.n_measurements()) throw InvalidArgument("plan row out of range");
  }
}

struct MeasurementSet {
  std::vector<Vector> z;
  double sigma2 = 0.0;
  int snapshot = 0;
};

namespace detail {

inline MeasurementSet draw_snapshot(const Vector& f, const MeasurementPlan& plan, double sigma2,
                                    std::mt19937_64& rng, int snapshot) {
  Vector noisy = f;
  if (sigma2 > 0.0) {
    std::normal_distribution<double> noise(0.0, std::sqrt(sigma2));
    for (Index r = 0; r < noisy.size(); ++r) noisy[r] += noise(rng);
  }
  MeasurementSet m;
  m.sigma2 = sigma2;
  m.snapshot = snapshot;
  for (const auto& rows : plan.rows) {
    Vector zi(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) zi[static_cast<Index>(k)] = noisy[rows[k]];
    m.z.push_back(std::move(zi));
  }
  return m;
}

}  // namespace detail

/// z_i = f_i(true state) + N(0, sigma2) noise. The noise vector is drawn over
/// the full measurement vector in layout order, then selected per site.
[[nodiscard]] inline MeasurementSet generate_measurements(const PsseModel& model, const PowerState& truth,
                                                          const MeasurementPlan& plan, double sigma2,
                                                          std::uint64_t rng_seed) {
  if (!(sigma2 >= 0.0)) throw InvalidArgument("noise variance must be nonnegative");
  std::mt19937_64 rng(rng_seed);
  return detail::draw_snapshot(model.measurements(truth), plan, sigma2, rng, 0);
}

/// T snapshots of the same state drawn from one generator in order, so the
/// first snapshot equals generate_measurements with the same seed.
[[nodiscard]] inline std::vector<MeasurementSet> streaming_snapshots(const PsseModel& model,
                                                                     const PowerState& truth,
                                                                     const MeasurementPlan& plan,
                                                                     double sigma2, int T,
                                                                     std::uint64_t rng_seed) {
  if (T < 1) throw InvalidArgument("snapshot count must be >= 1");
  if (!(sigma2 >= 0.0)) throw InvalidArgument("noise variance must be nonnegative");
  std::mt19937_64 rng(rng_seed);
  const Vector f = model.measurements(truth);
  std::vector<MeasurementSet> out;
  for (int t = 0; t < T; ++t) out.push_back(detail::draw_snapshot(f, plan, sigma2, rng, t));
  return out;
}

/// g_i(x) = z_i - f_i(x), G_i(x) = -df_i/dx.
[[nodiscard]] inline std::vector<SiteModel> build_nlls_sites(std::shared_ptr<const PsseModel> model,
                                                             const MeasurementPlan& plan,
                                                             const MeasurementSet& meas) {
  if (static_cast<int>(meas.z.size()) != plan.n_sites())
    throw InvalidArgument("measurement set does not match the plan");
  std::vector<SiteModel> sites;
  for (int i = 0; i < plan.n_sites(); ++i) {
    if (meas.z[i].size() != static_cast<Index>(plan.rows[i].size()))
      throw InvalidArgument("measurement vector length does not match the site selection");
    auto rows = std::make_shared<const std::vector<Index>>(plan.rows[i]);
    auto z = std::make_shared<const Vector>(meas.z[i]);
    SiteModel s;
    s.site_id = i;
    s.residual_dim = static_cast<Index>(rows->size());
    s.eval_residual = [model, rows, z](const Vector& x) -> Vector {
      return *z - model->eval_rows(model->to_state(x), *rows);
    };
    s.eval_jacobian = [model, rows](const Vector& x) -> Matrix {
      return -model->jacobian_rows(model->to_state(x), *rows);
    };
    sites.push_back(std::move(s));
  }
  return sites;
}

/// Flat start: theta = 0, V = 1.
[[nodiscard]] inline Vector flat_start(const PsseModel& model) {
  Vector x = Vector::Zero(model.n_unknowns());
  x.tail(model.n_buses()).setOnes();
  return x;
}

struct MseMetrics {
  std::vector<double> mse_v;
  std::vector<double> mse_theta;
  double global_v = 0.0;
  double global_theta = 0.0;
};

/// Per-agent mean squared V and theta errors over all N buses.
[[nodiscard]] inline MseMetrics mse_metrics(const PsseModel& model, std::span<const Vector> estimates,
                                            const PowerState& truth) {
  MseMetrics m;
  const double N = model.n_buses();
  for (const auto& x : estimates) {
    const PowerState s = model.to_state(x);
    m.mse_v.push_back((s.V - truth.V).squaredNorm() / N);
    m.mse_theta.push_back((s.theta - truth.theta).squaredNorm() / N);
  }
  if (!estimates.empty()) {
    for (std::size_t i = 0; i < estimates.size(); ++i) {
      m.global_v += m.mse_v[i];
      m.global_theta += m.mse_theta[i];
    }
    m.global_v /= static_cast<double>(estimates.size());
    m.global_theta /= static_cast<double>(estimates.size());
  }
  return m;
}

}  // namespace ggn::psse
