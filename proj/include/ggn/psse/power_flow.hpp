#pragma once

// Newton-Raphson power flow for producing a true operating state, plus the
// plain CSV format (bus, theta [rad], V [p.u.]) for precomputed states.

#include <Eigen/Core>
#include <Eigen/LU>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/psse/network.hpp"

namespace ggn::psse {

struct PowerFlowOptions {
  /// Multiplies every bus load Pd, Qd.
  double load_scale = 1.0;
  double tolerance = 1e-12;
  int max_iterations = 50;
};

struct PowerFlowResult {
  PowerState state;
  int iterations = 0;
  double mismatch = 0.0;
};

/// Slack bus: V from its generator (or the bus record), theta = 0. PV buses
/// (type 2 with an in-service generator): V fixed at the generator setpoint.
/// Reactive limits are not enforced.
[[nodiscard]] inline PowerFlowResult solve_power_flow(const PsseModel& model,
                                                      const PowerFlowOptions& opt = {}) {
  const auto& grid = model.grid();
  const int N = model.n_buses();
  Vector p_spec = Vector::Zero(N), q_spec = Vector::Zero(N);
  std::vector<bool> v_fixed(N, false);
  PowerState s{Vector::Zero(N), Vector::Ones(N)};
  for (int n = 0; n < N; ++n) {
    const auto& b = grid.buses[n];
    p_spec[n] = -opt.load_scale * b.Pd / grid.base_mva;
    q_spec[n] = -opt.load_scale * b.Qd / grid.base_mva;
    s.V[n] = b.Vm;
  }
  for (const auto& g : grid.gens) {
    if (g.status == 0) continue;
    const int n = grid.bus_index(g.bus);
    p_spec[n] += g.Pg / grid.base_mva;
    q_spec[n] += g.Qg / grid.base_mva;
    if (grid.buses[n].type != kPQ) {
      v_fixed[n] = true;
      s.V[n] = g.Vg;
    }
  }
  v_fixed[model.slack()] = true;

  // Equations: P at non-slack buses, Q at buses with free V.
  // Unknowns: the matching theta and V columns of the estimator layout.
  std::vector<int> p_bus, q_bus;
  for (int n = 0; n < N; ++n) {
    if (n != model.slack()) p_bus.push_back(n);
    if (!v_fixed[n]) q_bus.push_back(n);
  }
  const Index dim = static_cast<Index>(p_bus.size() + q_bus.size());
  std::vector<Index> rows, cols;
  for (int n : p_bus) {
    rows.push_back(n);
    cols.push_back(model.theta_column(n));
  }
  for (int n : q_bus) {
    rows.push_back(N + n);
    cols.push_back(model.v_column(n));
  }

  PowerFlowResult res;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    Vector mis(dim);
    for (Index r = 0; r < dim; ++r) {
      const int n = rows[r] < N ? static_cast<int>(rows[r]) : static_cast<int>(rows[r] - N);
      const double spec = rows[r] < N ? p_spec[n] : q_spec[n];
      mis[r] = spec - model.eval_row(s, rows[r]);
    }
    res.mismatch = mis.cwiseAbs().maxCoeff();
    res.iterations = it;
    if (!std::isfinite(res.mismatch)) break;
    if (res.mismatch <= opt.tolerance) {
      res.state = s;
      return res;
    }
    if (it == opt.max_iterations) break;
    const Matrix Jfull = model.jacobian_rows(s, rows);
    Matrix J(dim, dim);
    for (Index c = 0; c < dim; ++c) J.col(c) = Jfull.col(cols[c]);
    const Vector dx = J.partialPivLu().solve(mis);
    for (Index c = 0; c < dim; ++c) {
      const Index col = cols[c];
      if (col < N - 1) {
        for (int n = 0; n < N; ++n)
          if (model.theta_column(n) == col) s.theta[n] += dx[c];
      } else {
        s.V[col - (N - 1)] += dx[c];
      }
    }
  }
  throw NumericalError("power flow did not converge (mismatch " + std::to_string(res.mismatch) +
                       " after " + std::to_string(res.iterations) + " iterations)");
}

/// Writes "bus,theta,V" rows with %.17g numbers.
inline void write_state_csv(const std::string& path, const PsseModel& model, const PowerState& s) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write state file '" + path + "'");
  f << "bus,theta,V\n";
  char buf[96];
  for (int n = 0; n < model.n_buses(); ++n) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", model.grid().buses[n].id, s.theta[n], s.V[n]);
    f << buf;
  }
}

/// Reads a state file; an optional header line is allowed and every bus must appear once.
[[nodiscard]] inline PowerState parse_state_csv(const std::string& text, const PsseModel& model) {
  const int N = model.n_buses();
  PowerState s{Vector::Zero(N), Vector::Zero(N)};
  std::vector<bool> seen(N, false);
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line_no == 1 && line.find_first_of("0123456789") != line.find_first_not_of(" \t")) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 3) throw ParseError("expected 3 columns (bus,theta,V)", line_no);
    const int id = detail::parse_int(detail::trim(cells[0]), line_no);
    int n = -1;
    try {
      n = model.grid().bus_index(id);
    } catch (const InvalidArgument&) {
      throw ParseError("unknown bus " + std::to_string(id), line_no);
    }
    if (seen[n]) throw ParseError("bus " + std::to_string(id) + " listed twice", line_no);
    seen[n] = true;
    s.theta[n] = detail::parse_number(detail::trim(cells[1]), line_no);
    s.V[n] = detail::parse_number(detail::trim(cells[2]), line_no);
  }
  for (int n = 0; n < N; ++n)
    if (!seen[n]) throw ParseError("bus " + std::to_string(model.grid().buses[n].id) + " missing", line_no);
  if (s.theta[model.slack()] != 0.0) throw InvalidArgument("slack bus angle must be 0 in a state file");
  return s;
}

[[nodiscard]] inline PowerState load_state_csv(const std::string& path, const PsseModel& model) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open state file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_state_csv(ss.str(), model);
}

}  // namespace ggn::psse
