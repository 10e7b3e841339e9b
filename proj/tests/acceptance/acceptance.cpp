// Acceptance gate: one [PASS]/[FAIL] line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ggn/analysis.hpp"
#include "ggn/experiment/config.hpp"
#include "ggn/experiment/runner.hpp"
#include "ggn/ggn.hpp"
#include "ggn/gossip.hpp"
#include "ggn/nlls.hpp"
#include "ggn/psse/case_format.hpp"
#include "ggn/psse/estimation.hpp"
#include "ggn/psse/network.hpp"
#include "ggn/psse/power_flow.hpp"

namespace {

using namespace ggn;
namespace fs = std::filesystem;
using experiment::ExperimentConfig;
using experiment::ExperimentResult;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const fs::path kData = GGN_DATA_DIR;
const fs::path kConfigs = fs::path(GGN_DATA_DIR).parent_path() / "configs";
const fs::path kScratch = fs::temp_directory_path() / "ggn_acceptance";

std::shared_ptr<const psse::PsseModel> model(const char* name) {
  return std::make_shared<const psse::PsseModel>(psse::load_matpower_case((kData / name).string()));
}

psse::PowerState random_state(const psse::PsseModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> th(-0.4, 0.4), v(0.85, 1.15);
  psse::PowerState s{Vector(m.n_buses()), Vector(m.n_buses())};
  for (int n = 0; n < m.n_buses(); ++n) {
    s.theta[n] = n == m.slack() ? 0.0 : th(rng);
    s.V[n] = v(rng);
  }
  return s;
}

ExperimentConfig config(const char* name) { return experiment::load_config((kConfigs / name).string()); }

std::string scratch(const std::string& name) {
  const fs::path p = kScratch / name;
  fs::remove_all(p);
  return p.string();
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Network Val and Grad per record of the mean CSV, in row order.
struct Totals {
  std::vector<int> snapshot, update;
  std::vector<long> exchange;
  std::vector<double> val, grad;
};

Totals totals(const std::vector<experiment::MetricsRow>& rows) {
  Totals t;
  for (const auto& r : rows) {
    if (r.agent == 1) {
      t.snapshot.push_back(r.snapshot);
      t.update.push_back(r.update);
      t.exchange.push_back(r.exchange);
      t.val.push_back(0.0);
      t.grad.push_back(0.0);
    }
    t.val.back() += r.val;
    t.grad.back() += r.grad;
  }
  return t;
}

gossip::Topology random_connected(int n, std::mt19937_64& rng) {
  gossip::Topology t{n, {}};
  for (int i = 1; i < n; ++i) {
    std::uniform_int_distribution<int> parent(0, i - 1);
    t.edges.emplace_back(parent(rng), i);
  }
  std::bernoulli_distribution extra(0.3);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (extra(rng) && std::find(t.edges.begin(), t.edges.end(), std::make_pair(i, j)) == t.edges.end() &&
          std::find(t.edges.begin(), t.edges.end(), std::make_pair(j, i)) == t.edges.end())
        t.edges.emplace_back(i, j);
  return t;
}

// 1. Trigonometric measurement functions against the complex-power oracle.
Outcome criterion1() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (const char* name : {"case_ieee30.m", "case2.m"}) {
    const auto m = model(name);
    for (int t = 0; t < 100; ++t) {
      const auto s = random_state(*m, rng);
      worst = std::max(worst, (m->power_injections(s) - psse::complex_injection_oracle(*m, s)).lpNorm<Eigen::Infinity>());
      worst = std::max(worst, (m->line_flows(s) - psse::complex_flow_oracle(*m, s)).lpNorm<Eigen::Infinity>());
    }
  }
  return {worst <= 1e-10, fmt("max entrywise deviation %.3g over 200 states (tol 1e-10)", worst)};
}

// 2. Analytic Jacobian against central differences.
Outcome criterion2() {
  std::mt19937_64 rng(202);
  const auto m = model("case_ieee30.m");
  const auto plan = psse::partition_sites(*m, 3);
  const auto meas = psse::generate_measurements(*m, random_state(*m, rng), plan, 0.0, 1);
  const auto sites = psse::build_nlls_sites(m, plan, meas);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Vector x = m->to_unknowns(random_state(*m, rng));
    for (const auto& s : sites) {
      const Matrix G = s.eval_jacobian(x);
      const Matrix fd = finite_diff_jacobian(s, x, 1e-6);
      worst = std::max(worst, (G - fd).norm() / G.norm());
    }
  }
  return {worst <= 1e-6, fmt("max relative Frobenius error %.3g at 20 states x 3 sites (tol 1e-6)", worst)};
}

// 3. Mean preservation and doubly stochastic structure of sampled weight matrices.
Outcome criterion3() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> agents(2, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> payload(0.0, 1.0);
  double worst_mean = 0.0, worst_ds = 0.0;
  int failed_checks = 0;
  for (int t = 0; t < 10000; ++t) {
    const int n = agents(rng);
    gossip::WeightMatrix W;
    if (t % 2 == 0) {
      W = gossip::build_cse_weights(random_connected(n, rng), 0.05 + 0.9 * unit(rng));
    } else {
      gossip::GossipConfig g;
      g.protocol = gossip::Protocol::URE;
      g.beta = 0.05 + 0.9 * unit(rng);
      g.link_failure_prob = 0.5 * unit(rng);
      g.ure_pick_probs = gossip::uniform_pick_matrix(n);
      W = gossip::sample_ure_round(g, rng);
    }
    const auto c = gossip::check_doubly_stochastic(W.entries, 1e-12);
    if (!c.ok()) ++failed_checks;
    worst_ds = std::max({worst_ds, c.max_row_deviation, c.max_col_deviation});
    std::vector<Vector> p(n, Vector(5));
    for (auto& v : p)
      for (Index k = 0; k < 5; ++k) v[k] = payload(rng);
    const auto out = gossip::gossip_round(p, W);
    Vector before = Vector::Zero(5), after = Vector::Zero(5);
    for (int i = 0; i < n; ++i) {
      before += p[i] / n;
      after += out[i] / n;
    }
    worst_mean = std::max(worst_mean, (before - after).lpNorm<Eigen::Infinity>());
  }
  return {worst_mean <= 1e-12 && failed_checks == 0,
          fmt("max mean drift %.3g, max row/col deviation %.3g, %g failed checks of 10000", worst_mean, worst_ds,
              failed_checks)};
}

// 4. Geometric consensus bound on running products of CSE matrices.
Outcome criterion4() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> agents(2, 10);
  std::uniform_real_distribution<double> beta(0.05, 0.95);
  double worst = 0.0;
  int failures = 0;
  for (int t = 0; t < 50; ++t) {
    const int n = agents(rng);
    const auto W = gossip::build_cse_weights(random_connected(n, rng), beta(rng));
    const std::vector<gossip::WeightMatrix> seq(51, W);
    const auto r = gossip::verify_lemma1_bound(seq, W.eta, n, 1);
    // Entries 1..50 are the products with l = 1..50.
    for (std::size_t l = 1; l < r.deviation.size(); ++l) {
      const double ratio = r.deviation[l] / r.bound[l];
      worst = std::max(worst, ratio);
      if (ratio > 1.0) ++failures;
    }
    if (!r.assumptions_valid) ++failures;
  }
  return {failures == 0, fmt("worst deviation/bound %.3g over 50 topologies x 50 products, %g violations", worst,
                             failures)};
}

// 5. Single agent and perfect averaging reduce to centralized undamped GN.
Outcome criterion5() {
  const auto m = model("case_ieee30.m");
  const auto pf = psse::solve_power_flow(*m);
  const BoxSet box = m->box();
  const Vector x0 = psse::flat_start(*m);
  GgnConfig cfg;
  cfg.alpha = 1.0;
  cfg.ridge_scale = 0.0;
  cfg.max_updates = 8;
  cfg.stop_tol = 1e-300;
  cfg.schedule = {ExchangeSchedule::Kind::Constant, 1};

  double worst[2] = {0.0, 0.0};
  std::size_t compared = 0;
  for (int c = 0; c < 2; ++c) {
    const int I = c == 0 ? 1 : 3;
    const auto plan = psse::partition_sites(*m, I);
    const auto sites = psse::build_nlls_sites(m, plan, psse::generate_measurements(*m, pf.state, plan, 1e-6, 55));
    const auto central = centralized_run(sites, box, 1.0, x0, cfg.max_updates, cfg.stop_tol);
    auto weights = gossip::fixed_weights(gossip::make_weight_matrix(Matrix::Constant(I, I, 1.0 / I)));
    const auto traj = ggn_run(sites, box, weights, cfg, x0);
    const std::size_t K = std::min(central.size(), traj.records.size());
    for (std::size_t k = 0; k < K; ++k)
      for (const auto& xi : traj.records[k].x)
        worst[c] = std::max(worst[c], (xi - central[k]).lpNorm<Eigen::Infinity>());
    compared += K;
  }
  return {std::max(worst[0], worst[1]) <= 1e-12 && compared >= 10,
          fmt("max |x_i^k - x_GN^k|: I=1 %.3g, I=3 averaging %.3g over %g updates (tol 1e-12)", worst[0], worst[1],
              static_cast<double>(compared))};
}

struct StaticRun {
  ExperimentConfig cfg;
  ExperimentResult res;
  Totals t;
  double seconds = 0.0;
};

// 6. Static CSE experiment on IEEE-30.
Outcome criterion6(const StaticRun& run) {
  const auto& t = run.t;
  const double floor = run.res.noise_floor;
  std::size_t k15 = 0;
  for (std::size_t j = 0; j < t.update.size(); ++j)
    if (t.update[j] <= 15) k15 = j;
  const double val = t.val[k15];
  const double drop = t.grad.front() / t.grad[k15];
  const bool a = val <= 2.0 * floor;
  const bool b = drop >= 1e3;
  const bool c = run.seconds <= 60.0;
  return {a && b && c, fmt("Val_15 = %.4g vs 2x floor %.4g; Grad_0/Grad_15 = %.4g; %.2f s", val, 2.0 * floor, drop,
                           run.seconds) +
                           (t.update[k15] == 15 ? "" : " (stopped before k=15)")};
}

// 7. Descent discrepancy against the number of exchanges.
Outcome criterion7(const StaticRun& base) {
  std::vector<double> ell, logd, disc;
  for (int l = 1; l <= 20; ++l) {
    ExperimentConfig cfg = base.cfg;
    cfg.exchanges = l;
    cfg.record_discrepancy = true;
    cfg.certificate = false;
    const auto res = experiment::run_experiment(cfg, false);
    // Mean over repetitions of the largest discrepancy over agents and updates.
    double acc = 0.0;
    for (const auto& rep : res.repetitions) {
      double mx = 0.0;
      for (const auto& rec : rep.ggn.front().records)
        for (double d : rec.discrepancy) mx = std::max(mx, d);
      acc += mx;
    }
    const double d = acc / static_cast<double>(res.repetitions.size());
    ell.push_back(l);
    disc.push_back(d);
    logd.push_back(std::log(d));
  }
  const double n = static_cast<double>(ell.size());
  const double mx = std::accumulate(ell.begin(), ell.end(), 0.0) / n;
  const double my = std::accumulate(logd.begin(), logd.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t j = 0; j < ell.size(); ++j) {
    sxy += (ell[j] - mx) * (logd[j] - my);
    sxx += (ell[j] - mx) * (ell[j] - mx);
  }
  const double rate = std::exp(sxy / sxx);
  const double lam = gossip::lambda_eta(experiment::protocol_eta(base.cfg), base.cfg.sites, base.cfg.comm_interval);
  int decreases = 0;
  for (std::size_t j = 1; j < disc.size(); ++j) decreases += disc[j] < disc[j - 1] ? 1 : 0;
  // Monotone trend: most consecutive steps decrease and the last value is the smallest.
  const bool trend = decreases >= static_cast<int>(0.8 * (disc.size() - 1)) &&
                     disc.back() == *std::min_element(disc.begin(), disc.end());
  return {trend && rate <= lam + 0.05,
          fmt("fitted rate %.4g vs lambda_eta + 0.05 = %.4g; %g/19 decreasing steps", rate, lam + 0.05, decreases) +
              fmt("; discrepancy %.3g (l=1) -> %.3g (l=20)", disc.front(), disc.back())};
}

// 8. One-step error recursion with the measured certificate.
Outcome criterion8(const StaticRun& run) {
  if (!run.res.certificate) return {false, "no certificate computed"};
  const auto& cert = *run.res.certificate;
  long violations = 0, checks = 0;
  double worst = 0.0;
  for (const auto& rep : run.res.repetitions) {
    const auto& traj = rep.ggn.front();
    std::vector<std::vector<Vector>> iterates;
    std::vector<std::vector<double>> disc;
    for (const auto& rec : traj.records) {
      iterates.push_back(rec.x);
      disc.push_back(rec.discrepancy);
    }
    const auto rpt = analysis::verify_theorem1(iterates, disc, rep.snapshots.front().x_ref, cert);
    violations += rpt.recursion.violations;
    checks += rpt.recursion.checks;
    worst = std::max(worst, rpt.recursion.observed_value);
  }
  return {violations == 0 && checks > 0,
          fmt("%g violations in %g checks; worst lhs/rhs %.3g; T1 = %.3g", static_cast<double>(violations),
              static_cast<double>(checks), worst, cert.T1) +
              fmt(", T2 = %.4g (certificate applicable: ", cert.T2) + (cert.applicable ? "yes)" : "no)")};
}

// 9. GGN against the diffusion baseline on the exchange axis.
Outcome criterion9(const StaticRun& run) {
  const auto diff = config("diffusion_ieee30.ini");
  const double ggn_grad = experiment::series_from_mean(run.res.mean_rows, "ggn").at(30).second;
  double best = std::numeric_limits<double>::infinity(), best_c = 0.0;
  std::string all;
  for (double c : {0.01, 0.3, 0.5, 1.0}) {
    ExperimentConfig d = diff;
    d.step_c = c;
    d.total_exchanges = 900;
    const auto res = experiment::run_experiment(d, false);
    const double g = experiment::series_from_mean(res.mean_rows, "d").at(900).second;
    all += fmt(" c=%.2g:%.3g", c, g);
    if (g < best) {
      best = g;
      best_c = c;
    }
  }
  return {ggn_grad * 10.0 <= best,
          fmt("GGN Grad@30 = %.4g; best diffusion Grad@900 = %.4g (c=%.2g/l); ratio %.3g;", ggn_grad, best, best_c,
              best / ggn_grad) +
              all};
}

// 10. Streaming snapshots: spikes at boundaries, then re-convergence.
Outcome criterion10() {
  const auto cfg = config("streaming_ieee30.ini");
  const auto res = experiment::run_experiment(cfg, false);
  const Totals t = totals(res.mean_rows);
  const double floor = res.noise_floor;
  bool ok = cfg.snapshots == 3;
  std::string detail;
  for (int s = 0; s < cfg.snapshots; ++s) {
    std::size_t first = t.snapshot.size(), last = 0;
    for (std::size_t j = 0; j < t.snapshot.size(); ++j)
      if (t.snapshot[j] == s) {
        first = std::min(first, j);
        last = j;
      }
    if (first == t.snapshot.size()) return {false, "missing snapshot"};
    // Records first..last are updates 0..K of this snapshot; the tenth update or the last one if earlier.
    const std::size_t at10 = std::min(last, first + 10);
    const bool conv = t.val[at10] <= 2.0 * floor;
    ok = ok && conv;
    if (s > 0) {
      const double before = t.val[first - 1], spike = t.val[first];
      const bool spiked = spike > before;
      ok = ok && spiked;
      detail += fmt("t=%g: Val %.4g -> %.4g at boundary, %.4g after 10 updates; ", s, before, spike, t.val[at10]);
    } else {
      detail += fmt("t=0: Val %.4g after 10 updates; ", t.val[at10]);
    }
  }
  return {ok, detail + fmt("2x floor %.4g", 2.0 * floor)};
}

// 11. Randomized exchanges, one site per bus, with and without link failures.
Outcome criterion11() {
  const auto base = config("ure_ieee30.ini");
  bool ok = true;
  std::string detail;
  for (double p : {0.0, 0.3}) {
    ExperimentConfig cfg = base;
    cfg.link_failure_prob = p;
    const auto res = experiment::run_experiment(cfg, false);
    const double threshold = 100.0 * res.noise_floor;
    int worst_below = cfg.sites;
    bool finite = true;
    double disagreement = 0.0;
    for (const auto& rep : res.repetitions) {
      const auto& last = rep.ggn.back().records.back();
      int below = 0;
      for (double v : last.val) {
        finite = finite && std::isfinite(v);
        below += (std::isfinite(v) && v < threshold) ? 1 : 0;
      }
      worst_below = std::min(worst_below, below);
      disagreement = std::max(disagreement, last.max_disagreement);
      finite = finite && std::isfinite(last.max_disagreement);
    }
    const int need = p == 0.0 ? cfg.sites : 27;
    ok = ok && finite && worst_below >= need;
    detail += fmt("p=%.1f: min agents below 100x floor %g/30 (need %g), max disagreement %.3g; ", p, worst_below, need,
                  disagreement);
  }
  return {ok, detail + fmt("K=%g, %g exchanges/update", base.max_updates, base.exchanges)};
}

// 12. Repeated runs produce identical CSV bytes.
Outcome criterion12(const ExperimentConfig& cfg) {
  int compared = 0, differing = 0;
  for (const char* name : {"cse_ieee30.ini", "streaming_ieee30.ini"}) {
    const ExperimentConfig c = std::string(name) == "cse_ieee30.ini" ? cfg : config(name);
    const std::string a = scratch(std::string(name) + ".a"), b = scratch(std::string(name) + ".b");
    (void)experiment::run_experiment(c, true, a);
    (void)experiment::run_experiment(c, true, b);
    for (const auto& entry : fs::directory_iterator(a)) {
      if (entry.path().extension() != ".csv") continue;
      ++compared;
      if (read_file(entry.path()) != read_file(fs::path(b) / entry.path().filename())) ++differing;
    }
  }
  return {compared > 0 && differing == 0, fmt("%g CSV files compared, %g differ", compared, differing)};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] criterion %d: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), s);
    std::fflush(stdout);
    if (!o.pass) ++failed;
  };

  fs::create_directories(kScratch);
  report(1, criterion1);
  report(2, criterion2);
  report(3, criterion3);
  report(4, criterion4);
  report(5, criterion5);

  StaticRun run;
  try {
    run.cfg = config("cse_ieee30.ini");
    const auto t0 = std::chrono::steady_clock::now();
    run.res = experiment::run_experiment(run.cfg, true, scratch("cse_ieee30"));
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.t = totals(run.res.mean_rows);
  } catch (const std::exception& e) {
    std::printf("static experiment failed: %s\n", e.what());
  }
  const bool have_run = !run.t.val.empty();
  auto needs_run = [&](std::function<Outcome(const StaticRun&)> f) {
    return [&run, have_run, f]() -> Outcome {
      if (!have_run) return {false, "static experiment did not run"};
      return f(run);
    };
  };
  report(6, needs_run(criterion6));
  report(7, needs_run(criterion7));
  report(8, needs_run(criterion8));
  report(9, needs_run(criterion9));
  report(10, criterion10);
  report(11, criterion11);
  report(12, [&] { return criterion12(run.cfg); });

  fs::remove_all(kScratch);
  std::printf("%d of 12 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
