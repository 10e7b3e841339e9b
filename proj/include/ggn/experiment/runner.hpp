#pragma once

// Experiment harness: builds the estimation instance from a config, runs the
// configured algorithm for every repetition, and writes metric CSVs plus a
// key=value summary.
//
// Repetition r draws its measurement noise from seed + r. Random gossip draws
// use an independent stream seeded with splitmix64(seed + r), so changing the
// protocol never changes the noise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ggn/analysis.hpp"
#include "ggn/errors.hpp"
#include "ggn/experiment/config.hpp"
#include "ggn/experiment/metrics.hpp"
#include "ggn/ggn.hpp"
#include "ggn/gossip.hpp"
#include "ggn/nlls.hpp"
#include "ggn/psse/case_format.hpp"
#include "ggn/psse/estimation.hpp"
#include "ggn/psse/network.hpp"
#include "ggn/psse/power_flow.hpp"

namespace ggn::experiment {

/// Environment variable that replaces run.output_dir when set and non-empty.
inline constexpr const char* kOutputDirEnv = "GGN_OUTPUT_DIR";

[[nodiscard]] inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct RepetitionSeeds {
  std::uint64_t noise = 0;
  std::uint64_t gossip = 0;
};

[[nodiscard]] inline RepetitionSeeds repetition_seeds(std::uint64_t seed, int r) {
  const std::uint64_t base = seed + static_cast<std::uint64_t>(r);
  return {base, splitmix64(base)};
}

struct Instance {
  std::shared_ptr<const psse::PsseModel> model;
  psse::PowerState truth;
  psse::MeasurementPlan plan;
  BoxSet box;
  Vector x_start;

  [[nodiscard]] double noise_floor(double sigma2) const {
    return static_cast<double>(plan.total_measurements()) * sigma2;
  }
};

[[nodiscard]] inline Instance build_instance(const ExperimentConfig& cfg) {
  Instance inst;
  inst.model = std::make_shared<const psse::PsseModel>(psse::load_matpower_case(cfg.case_path));
  if (!cfg.true_state_path.empty()) {
    inst.truth = psse::load_state_csv(cfg.true_state_path, *inst.model);
  } else {
    psse::PowerFlowOptions opt;
    opt.load_scale = cfg.load_scale;
    inst.truth = psse::solve_power_flow(*inst.model, opt).state;
  }
  if (cfg.sites > inst.model->n_buses())
    throw ConfigError("sites.count", "exceeds the number of buses (" +
                                         std::to_string(inst.model->n_buses()) + ")");
  inst.plan = psse::partition_sites(*inst.model, cfg.sites);
  psse::validate_plan(*inst.model, inst.plan);
  inst.box = inst.model->box(cfg.theta_max, cfg.v_max);
  inst.x_start = psse::flat_start(*inst.model);
  return inst;
}

/// Mixing matrices for the configured protocol.
[[nodiscard]] inline gossip::WeightSource make_weight_source(const ExperimentConfig& cfg,
                                                             std::uint64_t gossip_seed) {
  if (cfg.protocol == gossip::Protocol::URE && cfg.sites >= 2)
    return gossip::ure_weights(cfg.gossip_config(gossip_seed));
  return gossip::fixed_weights(gossip::build_cse_weights(cfg.topology_graph(), cfg.beta));
}

/// Minimum nonzero weight the protocol can produce.
[[nodiscard]] inline double protocol_eta(const ExperimentConfig& cfg) {
  if (cfg.sites < 2) return 1.0;
  if (cfg.protocol == gossip::Protocol::URE) return std::min(cfg.beta, 1.0 - cfg.beta);
  return gossip::build_cse_weights(cfg.topology_graph(), cfg.beta).eta;
}

/// Measurements of one snapshot with their local models and the centralized
/// least-squares solution used as the reference point.
struct SnapshotProblem {
  psse::MeasurementSet meas;
  std::vector<SiteModel> sites;
  Vector x_ref;
  double ref_stationarity = 0.0;
};

[[nodiscard]] inline Vector reference_solution(std::span<const SiteModel> sites, const BoxSet& box,
                                               const Vector& x0, double condition_cap) {
  return centralized_run(sites, box, 1.0, x0, 100, 1e-14, condition_cap).back();
}

[[nodiscard]] inline std::vector<SnapshotProblem> make_snapshots(const ExperimentConfig& cfg,
                                                                 const Instance& inst,
                                                                 std::uint64_t noise_seed) {
  const auto sets = psse::streaming_snapshots(*inst.model, inst.truth, inst.plan, cfg.sigma2,
                                              cfg.snapshots, noise_seed);
  std::vector<SnapshotProblem> out;
  for (const auto& m : sets) {
    SnapshotProblem p;
    p.meas = m;
    p.sites = psse::build_nlls_sites(inst.model, inst.plan, m);
    p.x_ref = reference_solution(p.sites, inst.box, inst.x_start, cfg.condition_cap);
    p.ref_stationarity = stationarity_residual(p.sites, p.x_ref);
    out.push_back(std::move(p));
  }
  return out;
}

/// Aggregates over agents at the last record of the last snapshot.
struct FinalMetrics {
  double val = 0.0;
  double grad = 0.0;
  double mse_v = 0.0;
  double mse_theta = 0.0;
  double max_disagreement = 0.0;
  double error_to_reference = 0.0;
  /// Largest ||sum_i G_i^T g_i|| over agent iterates.
  double stationarity = 0.0;
  double updates = 0.0;
  double exchanges = 0.0;
};

struct RepetitionResult {
  int repetition = 0;
  RepetitionSeeds seeds;
  std::vector<MetricsRow> rows;
  std::vector<SnapshotProblem> snapshots;
  /// One trajectory per snapshot (ggn).
  std::vector<GgnTrajectory> ggn;
  /// Iterates per snapshot (centralized).
  std::vector<std::vector<Vector>> centralized;
  std::vector<DiffusionRecord> diffusion;
  FinalMetrics final;
  bool stopped_early = false;
  long identity_exchanges = 0;
  double eta = 1.0;
};

namespace detail {

struct RowContext {
  const std::string& run_id;
  const Instance& inst;
  std::vector<MetricsRow>& rows;
};

inline void emit_rows(RowContext& c, int snapshot, int update, long exchange, std::span<const Vector> xs,
                      std::span<const double> val, std::span<const double> grad,
                      std::span<const double> discrepancy, const Vector& x_ref) {
  const auto mse = psse::mse_metrics(*c.inst.model, xs, c.inst.truth);
  const double dis = max_pairwise_distance(xs);
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Vector& x = xs.size() == 1 ? xs[0] : xs[i];
    const std::size_t a = xs.size() == 1 ? 0 : i;
    MetricsRow r;
    r.run_id = c.run_id;
    r.snapshot = snapshot;
    r.update = update;
    r.exchange = exchange;
    r.agent = static_cast<int>(i) + 1;
    r.val = val[i];
    r.grad = grad[i];
    r.mse_v = mse.mse_v[a];
    r.mse_theta = mse.mse_theta[a];
    r.max_disagreement = dis;
    if (i < discrepancy.size()) r.descent_discrepancy = discrepancy[i];
    r.error_to_reference = (x - x_ref).norm();
    c.rows.push_back(std::move(r));
  }
}

inline FinalMetrics final_metrics(const Instance& inst, std::span<const SiteModel> sites,
                                  std::span<const Vector> xs, std::span<const double> val,
                                  std::span<const double> grad, const Vector& x_ref) {
  FinalMetrics f;
  for (double v : val) f.val += v;
  for (double g : grad) f.grad += g;
  const auto mse = psse::mse_metrics(*inst.model, xs, inst.truth);
  f.mse_v = mse.global_v;
  f.mse_theta = mse.global_theta;
  f.max_disagreement = max_pairwise_distance(xs);
  for (const auto& x : xs) {
    f.error_to_reference = std::max(f.error_to_reference, (x - x_ref).norm());
    f.stationarity = std::max(f.stationarity, stationarity_residual(sites, x));
  }
  return f;
}

/// Per-site Val and Grad contributions at a shared iterate.
inline std::pair<std::vector<double>, std::vector<double>> site_metrics(std::span<const SiteModel> sites,
                                                                        const Vector& x) {
  std::vector<double> val, grad;
  for (const auto& s : sites) {
    const Vector g = s.eval_residual(x);
    val.push_back(g.squaredNorm());
    grad.push_back((s.eval_jacobian(x).transpose() * g).norm());
  }
  return {val, grad};
}

}  // namespace detail

/// Runs repetition r of the configured experiment. The rows carry `run_id`.
[[nodiscard]] inline RepetitionResult run_repetition(const ExperimentConfig& cfg, const Instance& inst,
                                                     int r, const std::string& run_id) {
  RepetitionResult res;
  res.repetition = r;
  res.seeds = repetition_seeds(cfg.seed, r);
  res.snapshots = make_snapshots(cfg, inst, res.seeds.noise);
  detail::RowContext ctx{run_id, inst, res.rows};
  const int T = static_cast<int>(res.snapshots.size());

  switch (cfg.algorithm) {
    case Algorithm::Centralized: {
      Vector x = inst.x_start;
      int offset = 0;
      for (int t = 0; t < T; ++t) {
        const auto& sp = res.snapshots[t];
        auto xs = centralized_run(sp.sites, inst.box, cfg.alpha, x, cfg.max_updates, cfg.stop_tol,
                                  cfg.condition_cap);
        res.stopped_early = res.stopped_early || static_cast<int>(xs.size()) - 1 < cfg.max_updates;
        for (std::size_t k = 0; k < xs.size(); ++k) {
          const auto [val, grad] = detail::site_metrics(sp.sites, xs[k]);
          detail::emit_rows(ctx, t, offset + static_cast<int>(k), 0, std::span<const Vector>(&xs[k], 1),
                            val, grad, {}, sp.x_ref);
        }
        offset += static_cast<int>(xs.size()) - 1;
        x = xs.back();
        if (t + 1 == T) {
          const auto [val, grad] = detail::site_metrics(sp.sites, x);
          res.final = detail::final_metrics(inst, sp.sites, std::span<const Vector>(&x, 1), val, grad, sp.x_ref);
          res.final.updates = offset;
        }
        res.centralized.push_back(std::move(xs));
      }
      break;
    }
    case Algorithm::Ggn: {
      auto weights = make_weight_source(cfg, res.seeds.gossip);
      const GgnConfig gcfg = cfg.ggn_config();
      std::vector<Vector> starts(inst.plan.n_sites(), inst.x_start);
      int offset = 0;
      long exchanges = 0;
      for (int t = 0; t < T; ++t) {
        const auto& sp = res.snapshots[t];
        auto traj = ggn_run(sp.sites, inst.box, weights, gcfg, std::span<const Vector>(starts));
        for (const auto& rec : traj.records)
          detail::emit_rows(ctx, t, offset + rec.k, exchanges + rec.exchanges, rec.x, rec.val, rec.grad,
                            rec.discrepancy, sp.x_ref);
        offset += traj.records.back().k;
        exchanges += traj.total_exchanges;
        res.stopped_early = res.stopped_early || traj.stopped_early;
        res.identity_exchanges += traj.identity_exchanges;
        res.eta = std::min(res.eta, traj.eta);
        starts = traj.final_iterates();
        if (t + 1 == T) {
          const auto& last = traj.records.back();
          res.final = detail::final_metrics(inst, sp.sites, last.x, last.val, last.grad, sp.x_ref);
          res.final.updates = offset;
          res.final.exchanges = static_cast<double>(exchanges);
        }
        res.ggn.push_back(std::move(traj));
      }
      break;
    }
    case Algorithm::Diffusion: {
      auto weights = make_weight_source(cfg, res.seeds.gossip);
      const auto& sp = res.snapshots.front();
      res.diffusion = diffusion_baseline_run(sp.sites, inst.box, weights, {cfg.step_kind, cfg.step_c},
                                             cfg.total_exchanges, inst.x_start);
      for (const auto& rec : res.diffusion)
        detail::emit_rows(ctx, 0, static_cast<int>(rec.exchanges), rec.exchanges, rec.x, rec.val, rec.grad,
                          {}, sp.x_ref);
      const auto& last = res.diffusion.back();
      res.final = detail::final_metrics(inst, sp.sites, last.x, last.val, last.grad, sp.x_ref);
      res.final.updates = static_cast<double>(last.exchanges);
      res.final.exchanges = static_cast<double>(last.exchanges);
      break;
    }
  }
  return res;
}

/// Element-wise mean of per-repetition rows. Rows are matched by (snapshot,
/// position within the snapshot, agent); a repetition that stopped early in a
/// snapshot contributes its last state of that snapshot to the later positions.
[[nodiscard]] inline std::vector<MetricsRow> average_rows(const std::vector<std::vector<MetricsRow>>& reps,
                                                          const std::string& run_id) {
  if (reps.empty()) return {};
  struct Block {
    std::vector<const MetricsRow*> rows;
  };
  // blocks[rep][snapshot][position]
  std::vector<std::map<int, std::vector<Block>>> blocks(reps.size());
  for (std::size_t r = 0; r < reps.size(); ++r) {
    const MetricsRow* prev = nullptr;
    for (const auto& row : reps[r]) {
      auto& seq = blocks[r][row.snapshot];
      if (!prev || prev->snapshot != row.snapshot || prev->update != row.update ||
          prev->exchange != row.exchange || row.agent <= prev->agent)
        seq.emplace_back();
      seq.back().rows.push_back(&row);
      prev = &row;
    }
  }
  std::map<int, std::size_t> length;
  for (const auto& b : blocks)
    for (const auto& [t, seq] : b) length[t] = std::max(length[t], seq.size());

  std::vector<MetricsRow> out;
  const double R = static_cast<double>(reps.size());
  int update_offset = 0;
  for (const auto& [t, len] : length) {
    // Keys come from the first repetition with the longest sequence.
    std::size_t key_rep = 0;
    for (std::size_t r = 0; r < reps.size(); ++r)
      if (blocks[r].count(t) && blocks[r].at(t).size() == len) {
        key_rep = r;
        break;
      }
    for (std::size_t j = 0; j < len; ++j) {
      const Block& key_block = blocks[key_rep].at(t)[j];
      for (std::size_t a = 0; a < key_block.rows.size(); ++a) {
        MetricsRow m = *key_block.rows[a];
        m.run_id = run_id;
        m.update = update_offset + static_cast<int>(j);
        double* acc[] = {&m.val, &m.grad, &m.mse_v, &m.mse_theta, &m.max_disagreement, &m.descent_discrepancy,
                         &m.error_to_reference};
        for (double* p : acc) *p = 0.0;
        for (std::size_t r = 0; r < reps.size(); ++r) {
          const auto& seq = blocks[r].at(t);
          const MetricsRow& src = *seq[std::min(j, seq.size() - 1)].rows.at(a);
          const double vals[] = {src.val, src.grad, src.mse_v, src.mse_theta, src.max_disagreement,
                                 src.descent_discrepancy, src.error_to_reference};
          for (int q = 0; q < 7; ++q) *acc[q] += vals[q];
        }
        for (double* p : acc) *p /= R;
        out.push_back(std::move(m));
      }
    }
    update_offset += static_cast<int>(len) - 1;
  }
  return out;
}

/// Certificate for the configured run evaluated on one snapshot. Constants are
/// sampled on a box around the reference solution ("operating") or on the whole
/// constraint set ("box").
[[nodiscard]] inline analysis::ConvergenceCertificate compute_certificate(const ExperimentConfig& cfg,
                                                                          const Instance& inst,
                                                                          const SnapshotProblem& sp,
                                                                          std::uint64_t seed) {
  BoxSet region = inst.box;
  if (cfg.certificate_region == "operating") {
    const Index n = inst.box.dim();
    const Index n_theta = inst.model->n_buses() - 1;
    Vector radius(n);
    radius.head(n_theta).setConstant(cfg.region_theta);
    radius.tail(n - n_theta).setConstant(cfg.region_v);
    region.lower = (sp.x_ref - radius).cwiseMax(inst.box.lower);
    region.upper = (sp.x_ref + radius).cwiseMin(inst.box.upper);
  }
  ProblemConstants pc = estimate_constants(sp.sites, region, cfg.certificate_samples, seed);
  const double eps_min = stacked_residual(sp.sites, sp.x_ref).norm();
  pc.epsilon_min = eps_min;

  analysis::CertificateRequest q;
  q.constants = pc;
  q.alpha = cfg.alpha;
  q.epsilon_min = eps_min;
  q.n_agents = cfg.algorithm == Algorithm::Centralized ? 1 : cfg.sites;
  q.n_unknowns = inst.box.dim();
  q.eta = protocol_eta(cfg);
  q.comm_interval = cfg.comm_interval;
  q.xi = cfg.xi;
  q.schedule = cfg.schedule;
  q.horizon = cfg.max_updates;
  auto cert = analysis::build_certificate(q);
  if (cfg.protocol == gossip::Protocol::URE && q.n_agents > 1)
    cert.notes.push_back("random exchanges: connectivity over each interval is not guaranteed");
  return cert;
}

struct ExperimentResult {
  Instance instance;
  std::string output_dir;
  std::vector<RepetitionResult> repetitions;
  std::vector<MetricsRow> mean_rows;
  FinalMetrics mean_final;
  double noise_floor = 0.0;
  std::optional<analysis::ConvergenceCertificate> certificate;
  double wall_seconds = 0.0;
  std::string summary;
};

[[nodiscard]] inline std::string resolve_output_dir(const ExperimentConfig& cfg) {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? std::string(env) : cfg.output_dir;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Runs every repetition, spreading them over hardware threads. Results are
/// stored by index, so the output does not depend on scheduling.
inline std::vector<RepetitionResult> run_all(const ExperimentConfig& cfg, const Instance& inst) {
  const int R = cfg.repetitions;
  std::vector<RepetitionResult> out(R);
  std::vector<std::exception_ptr> errors(R);
  auto work = [&](int r) {
    try {
      out[r] = run_repetition(cfg, inst, r, cfg.run_id + "-r" + std::to_string(r));
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };
  const int n_threads = std::max(1, std::min<int>(R, static_cast<int>(std::thread::hardware_concurrency())));
  if (n_threads == 1) {
    for (int r = 0; r < R; ++r) work(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back([&, w] {
        for (int r = w; r < R; r += n_threads) work(r);
      });
    for (auto& th : pool) th.join();
  }
  for (int r = 0; r < R; ++r) {
    if (!errors[r]) continue;
    try {
      std::rethrow_exception(errors[r]);
    } catch (const Error& e) {
      throw Error(e.category(), "repetition " + std::to_string(r) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Runs the experiment and, when `write_files` is set, writes
/// metrics_rep<r>.csv, metrics_mean.csv and summary.txt to `output_dir`
/// (default: resolve_output_dir).
[[nodiscard]] inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_files = true,
                                                     std::optional<std::string> output_dir = std::nullopt) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  res.instance = build_instance(cfg);
  const Instance& inst = res.instance;
  res.noise_floor = inst.noise_floor(cfg.sigma2);
  res.repetitions = detail::run_all(cfg, inst);

  std::vector<std::vector<MetricsRow>> all_rows;
  for (const auto& rep : res.repetitions) all_rows.push_back(rep.rows);
  res.mean_rows = average_rows(all_rows, cfg.run_id);

  const double R = cfg.repetitions;
  auto& m = res.mean_final;
  int stopped = 0;
  long identity = 0;
  double eta = 1.0, ref_stat = 0.0;
  for (const auto& rep : res.repetitions) {
    const auto& f = rep.final;
    m.val += f.val / R;
    m.grad += f.grad / R;
    m.mse_v += f.mse_v / R;
    m.mse_theta += f.mse_theta / R;
    m.max_disagreement += f.max_disagreement / R;
    m.error_to_reference += f.error_to_reference / R;
    m.updates += f.updates / R;
    m.exchanges += f.exchanges / R;
    m.stationarity = std::max(m.stationarity, f.stationarity);
    stopped += rep.stopped_early ? 1 : 0;
    identity += rep.identity_exchanges;
    eta = std::min(eta, rep.eta);
    for (const auto& sp : rep.snapshots) ref_stat = std::max(ref_stat, sp.ref_stationarity);
  }

  if (cfg.certificate) {
    const auto& rep0 = res.repetitions.front();
    res.certificate = compute_certificate(cfg, inst, rep0.snapshots.front(), rep0.seeds.noise);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ostringstream s;
  auto kv = [&](const std::string& k, const std::string& v) { s << k << '=' << v << '\n'; };
  auto num = [&](const std::string& k, double v) { kv(k, detail::fmt(v)); };
  kv("run_id", cfg.run_id);
  kv("algorithm", to_string(cfg.algorithm));
  kv("case", inst.model->grid().name);
  num("buses", inst.model->n_buses());
  num("unknowns", static_cast<double>(inst.box.dim()));
  num("measurements", static_cast<double>(inst.plan.total_measurements()));
  num("sites", cfg.sites);
  if (cfg.algorithm != Algorithm::Centralized) kv("protocol", gossip::to_string(cfg.protocol));
  num("repetitions", cfg.repetitions);
  kv("seed", std::to_string(cfg.seed));
  num("sigma2", cfg.sigma2);
  num("snapshots", cfg.snapshots);
  num("noise_floor", res.noise_floor);
  num("final.val", m.val);
  num("final.grad", m.grad);
  num("final.mse_v", m.mse_v);
  num("final.mse_theta", m.mse_theta);
  num("final.max_disagreement", m.max_disagreement);
  num("final.error_to_reference", m.error_to_reference);
  num("final.stationarity", m.stationarity);
  num("final.updates", m.updates);
  num("final.exchanges", m.exchanges);
  num("runs_stopped_early", stopped);
  if (cfg.algorithm != Algorithm::Centralized) {
    num("observed_eta", eta);
    kv("identity_exchanges", std::to_string(identity));
  }
  num("reference.stationarity", ref_stat);
  if (res.certificate) s << analysis::to_key_values(*res.certificate);
  num("wall_clock_seconds", res.wall_seconds);
  res.summary = s.str();

  if (write_files) {
    res.output_dir = output_dir ? *output_dir : resolve_output_dir(cfg);
    std::error_code ec;
    std::filesystem::create_directories(res.output_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + res.output_dir + "': " + ec.message());
    namespace fs = std::filesystem;
    for (std::size_t r = 0; r < res.repetitions.size(); ++r)
      write_text((fs::path(res.output_dir) / ("metrics_rep" + std::to_string(r) + ".csv")).string(),
                 to_csv(res.repetitions[r].rows));
    write_text((fs::path(res.output_dir) / "metrics_mean.csv").string(), to_csv(res.mean_rows));
    write_text((fs::path(res.output_dir) / "summary.txt").string(), res.summary);
  }
  return res;
}

/// Outcome of one link-failure probability.
struct FailurePoint {
  double p = 0.0;
  FinalMetrics mean;
  double mse_v_min = 0.0;
  double mse_v_max = 0.0;
  /// Agents of repetition 0 whose final Val_i is below 100x the noise floor.
  int agents_below_threshold = 0;
  int n_agents = 0;
  bool converged = false;
};

/// One run set per p with protocol URE. Each set writes its files under
/// <output>/p_<p>; the degradation table goes to <output>/failure_sweep.csv.
///
/// Per-agent Val_i is compared against 100x the network noise floor. A set is
/// flagged converged when the final disagreement is finite and every agent
/// meets that threshold in every repetition.
[[nodiscard]] inline std::vector<FailurePoint> run_failure_sweep(const ExperimentConfig& base,
                                                                 const std::vector<double>& p_values,
                                                                 bool write_files = true) {
  if (base.algorithm != Algorithm::Ggn) throw InvalidArgument("failure sweep needs algorithm.kind = ggn");
  if (base.protocol != gossip::Protocol::URE) throw InvalidArgument("failure sweep needs gossip.protocol = ure");
  if (p_values.empty()) throw InvalidArgument("failure sweep needs at least one probability");
  const std::string root = resolve_output_dir(base);
  std::vector<FailurePoint> out;
  for (double p : p_values) {
    if (!(p >= 0.0 && p < 1.0)) throw InvalidArgument("link failure probability must lie in [0, 1)");
    ExperimentConfig cfg = base;
    cfg.link_failure_prob = p;
    cfg.run_id = base.run_id + "-p" + detail::fmt(p);
    cfg.output_dir = (std::filesystem::path(root) / ("p_" + detail::fmt(p))).string();
    const ExperimentResult res = run_experiment(cfg, write_files, cfg.output_dir);
    FailurePoint fp;
    fp.p = p;
    fp.mean = res.mean_final;
    fp.n_agents = cfg.sites;
    fp.mse_v_min = std::numeric_limits<double>::infinity();
    fp.converged = std::isfinite(res.mean_final.max_disagreement);
    const double threshold = 100.0 * res.noise_floor;
    for (std::size_t r = 0; r < res.repetitions.size(); ++r) {
      const auto& rep = res.repetitions[r];
      const auto& last = rep.ggn.back().records.back();
      const auto mse = psse::mse_metrics(*res.instance.model, last.x, res.instance.truth);
      for (double v : mse.mse_v) {
        fp.mse_v_min = std::min(fp.mse_v_min, v);
        fp.mse_v_max = std::max(fp.mse_v_max, v);
      }
      int below = 0;
      for (double v : last.val) below += (std::isfinite(v) && v < threshold) ? 1 : 0;
      if (r == 0) fp.agents_below_threshold = below;
      if (below < cfg.sites) fp.converged = false;
    }
    out.push_back(fp);
  }
  if (write_files) {
    std::filesystem::create_directories(root);
    std::string csv =
        "p,final_val,final_grad,mse_v_mean,mse_v_min,mse_v_max,mse_theta_mean,max_disagreement,"
        "agents_below_threshold,agents,converged\n";
    for (const auto& fp : out) {
      csv += detail::fmt(fp.p) + ',' + detail::fmt(fp.mean.val) + ',' + detail::fmt(fp.mean.grad) + ',' +
             detail::fmt(fp.mean.mse_v) + ',' + detail::fmt(fp.mse_v_min) + ',' + detail::fmt(fp.mse_v_max) +
             ',' + detail::fmt(fp.mean.mse_theta) + ',' + detail::fmt(fp.mean.max_disagreement) + ',' +
             std::to_string(fp.agents_below_threshold) + ',' + std::to_string(fp.n_agents) + ',' +
             (fp.converged ? "true" : "false") + '\n';
    }
    write_text((std::filesystem::path(root) / "failure_sweep.csv").string(), csv);
  }
  return out;
}

/// Network totals Val and Grad against cumulative exchanges.
struct ComparisonSeries {
  std::string label;
  std::vector<long> exchange;
  std::vector<double> val;
  std::vector<double> grad;

  /// Value at the largest recorded exchange count not exceeding `ell`.
  [[nodiscard]] std::pair<double, double> at(long ell) const {
    std::size_t idx = 0;
    for (std::size_t j = 0; j < exchange.size() && exchange[j] <= ell; ++j) idx = j;
    return {val[idx], grad[idx]};
  }
};

[[nodiscard]] inline ComparisonSeries series_from_mean(const std::vector<MetricsRow>& rows, std::string label) {
  ComparisonSeries s;
  s.label = std::move(label);
  for (const auto& r : rows) {
    if (r.agent == 1) {
      s.exchange.push_back(r.exchange);
      s.val.push_back(0.0);
      s.grad.push_back(0.0);
    }
    s.val.back() += r.val;
    s.grad.back() += r.grad;
  }
  return s;
}

/// Throws InvalidArgument unless both configs describe the same estimation instance.
inline void require_same_instance(const ExperimentConfig& a, const ExperimentConfig& b) {
  auto check = [](bool same, const char* what) {
    if (!same) throw InvalidArgument(std::string("compared configs differ in ") + what);
  };
  namespace fs = std::filesystem;
  check(fs::weakly_canonical(a.case_path) == fs::weakly_canonical(b.case_path), "problem.case");
  check(a.true_state_path == b.true_state_path, "problem.true_state");
  check(a.load_scale == b.load_scale, "problem.load_scale");
  check(a.sigma2 == b.sigma2, "problem.sigma2");
  check(a.snapshots == b.snapshots, "problem.snapshots");
  check(a.theta_max == b.theta_max && a.v_max == b.v_max, "the constraint box");
  check(a.sites == b.sites, "sites.count");
  check(a.partition == b.partition, "sites.partition");
  check(a.seed == b.seed, "run.seed");
  check(a.repetitions == b.repetitions, "run.repetitions");
}

/// Runs both configs (plus one diffusion run per extra step constant when the
/// second config is a diffusion run) and writes comparison.csv with columns
/// series,exchange,val,grad.
[[nodiscard]] inline std::vector<ComparisonSeries> compare_algorithms(const ExperimentConfig& a,
                                                                      const ExperimentConfig& b,
                                                                      const std::vector<double>& diffusion_steps = {},
                                                                      bool write_files = true) {
  require_same_instance(a, b);
  auto label = [](const ExperimentConfig& c) {
    std::string l = c.run_id + ":" + to_string(c.algorithm);
    if (c.algorithm == Algorithm::Diffusion)
      l += std::string(c.step_kind == StepSchedule::Kind::Diminishing ? ":c/l=" : ":c=") + detail::fmt(c.step_c);
    return l;
  };
  std::vector<ExperimentConfig> runs{a, b};
  if (b.algorithm == Algorithm::Diffusion)
    for (double c : diffusion_steps) {
      if (c == b.step_c) continue;
      ExperimentConfig d = b;
      d.step_c = c;
      runs.push_back(d);
    }
  std::vector<ComparisonSeries> out;
  for (auto cfg : runs) {
    cfg.certificate = false;
    const auto res = run_experiment(cfg, false);
    out.push_back(series_from_mean(res.mean_rows, label(cfg)));
  }
  if (write_files) {
    const std::string dir = resolve_output_dir(a);
    std::filesystem::create_directories(dir);
    std::string csv = "series,exchange,val,grad\n";
    for (const auto& s : out)
      for (std::size_t j = 0; j < s.exchange.size(); ++j)
        csv += csv_field(s.label) + ',' + std::to_string(s.exchange[j]) + ',' + detail::fmt(s.val[j]) + ',' +
               detail::fmt(s.grad[j]) + '\n';
    write_text((std::filesystem::path(dir) / "comparison.csv").string(), csv);
  }
  return out;
}

}  // namespace ggn::experiment
