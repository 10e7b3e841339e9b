// Command-line front end for the experiment harness.
//
//   ggn_cli run <config>
//   ggn_cli sweep-failures <config> --p 0,0.3
//   ggn_cli compare <configA> <configB> [--diffusion-steps 0.01,0.3,0.5,1]
//   ggn_cli certify <config>
//   ggn_cli power-flow <case.m> [--load-scale s] [--out state.csv]
//
// Exit codes: 0 success, 2 config error, 3 parse/io/unsupported input,
// 4 numerical or singular system, 5 invalid argument, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/experiment/config.hpp"
#include "ggn/experiment/runner.hpp"
#include "ggn/psse/case_format.hpp"
#include "ggn/psse/power_flow.hpp"

namespace {

using namespace ggn;
using namespace ggn::experiment;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Parse:
    case ErrorCategory::Io:
    case ErrorCategory::UnsupportedFeature: return 3;
    case ErrorCategory::Numerical:
    case ErrorCategory::SingularSystem: return 4;
    case ErrorCategory::InvalidArgument: return 5;
  }
  return 1;
}

std::string line_value(const std::string& summary, const std::string& key) {
  const auto pos = summary.find("\n" + key + "=");
  if (pos == std::string::npos) return "";
  const auto start = pos + key.size() + 2;
  return summary.substr(start, summary.find('\n', start) - start);
}

int cmd_run(const std::string& path) {
  const auto cfg = load_config(path);
  const auto res = run_experiment(cfg);
  std::printf("wrote %zu repetition file(s), metrics_mean.csv and summary.txt to %s\n",
              res.repetitions.size(), res.output_dir.c_str());
  for (const char* key : {"noise_floor", "final.val", "final.grad", "final.mse_v", "final.mse_theta",
                          "final.max_disagreement", "final.stationarity", "wall_clock_seconds"})
    std::printf("  %s = %s\n", key, line_value("\n" + res.summary, key).c_str());
  return 0;
}

int cmd_sweep(const std::string& path, const std::vector<double>& ps) {
  const auto cfg = load_config(path);
  const auto points = run_failure_sweep(cfg, ps);
  std::printf("%-8s %-24s %-24s %-12s %s\n", "p", "final_val", "max_disagreement", "below_100x", "converged");
  for (const auto& fp : points)
    std::printf("%-8.3g %-24.17g %-24.17g %3d/%-8d %s\n", fp.p, fp.mean.val, fp.mean.max_disagreement,
                fp.agents_below_threshold, fp.n_agents, fp.converged ? "yes" : "no");
  std::printf("table written to %s/failure_sweep.csv\n", resolve_output_dir(cfg).c_str());
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b, const std::vector<double>& steps) {
  const auto ca = load_config(a);
  const auto cb = load_config(b);
  const auto series = compare_algorithms(ca, cb, steps);
  std::printf("%-40s %-10s %-24s %s\n", "series", "exchanges", "val", "grad");
  for (const auto& s : series) {
    const auto [val, grad] = s.at(s.exchange.back());
    std::printf("%-40s %-10ld %-24.17g %.17g\n", s.label.c_str(), s.exchange.back(), val, grad);
  }
  std::printf("comparison written to %s/comparison.csv\n", resolve_output_dir(ca).c_str());
  return 0;
}

int cmd_certify(const std::string& path) {
  const auto cfg = load_config(path);
  const Instance inst = build_instance(cfg);
  const auto seeds = repetition_seeds(cfg.seed, 0);
  const auto snaps = make_snapshots(cfg, inst, seeds.noise);
  const auto cert = compute_certificate(cfg, inst, snaps.front(), seeds.noise);
  std::cout << analysis::to_key_values(cert);
  return 0;
}

int cmd_power_flow(const std::string& case_path, double load_scale, const std::string& out) {
  const psse::PsseModel model(psse::load_matpower_case(case_path));
  psse::PowerFlowOptions opt;
  opt.load_scale = load_scale;
  const auto res = psse::solve_power_flow(model, opt);
  if (out.empty()) {
    std::printf("bus,theta,V\n");
    for (int n = 0; n < model.n_buses(); ++n)
      std::printf("%d,%.17g,%.17g\n", model.grid().buses[n].id, res.state.theta[n], res.state.V[n]);
  } else {
    psse::write_state_csv(out, model, res.state);
    std::printf("converged in %d iterations (mismatch %.3g); state written to %s\n", res.iterations,
                res.mismatch, out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gossip-based Gauss-Newton experiments for power system state estimation"};
  app.require_subcommand(1);

  std::string config_a, config_b, case_path, out;
  std::vector<double> p_values, steps;
  double load_scale = 1.0;

  auto* run = app.add_subcommand("run", "run the configured experiment");
  run->add_option("config", config_a, "experiment config (INI)")->required();

  auto* sweep = app.add_subcommand("sweep-failures", "repeat a URE experiment over link-failure probabilities");
  sweep->add_option("config", config_a, "experiment config (INI)")->required();
  sweep->add_option("--p", p_values, "failure probabilities")->required()->delimiter(',');

  auto* compare = app.add_subcommand("compare", "align two algorithms by total gossip exchanges");
  compare->add_option("config_a", config_a, "first config")->required();
  compare->add_option("config_b", config_b, "second config")->required();
  compare->add_option("--diffusion-steps", steps, "extra diffusion step constants")->delimiter(',');

  auto* certify = app.add_subcommand("certify", "print the convergence certificate");
  certify->add_option("config", config_a, "experiment config (INI)")->required();

  auto* pf = app.add_subcommand("power-flow", "solve a power flow and print the bus state");
  pf->add_option("case", case_path, "MATPOWER case file")->required();
  pf->add_option("--load-scale", load_scale, "load multiplier");
  pf->add_option("--out", out, "write the state CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_a);
    if (*sweep) return cmd_sweep(config_a, p_values);
    if (*compare) return cmd_compare(config_a, config_b, steps);
    if (*certify) return cmd_certify(config_a);
    if (*pf) return cmd_power_flow(case_path, load_scale, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", to_string(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
