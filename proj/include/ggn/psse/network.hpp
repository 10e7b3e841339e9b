#pragma once

// Power-flow measurement model in polar coordinates.
//
// Measurement vector layout (indices used by the site selections):
//   [0, N)                  P_n  active injection at bus n
//   [N, 2N)                 Q_n  reactive injection at bus n
//   [2N, 2N + 2L)           P flow, entry 2l + dir
//   [2N + 2L, 2N + 4L)      Q flow, entry 2l + dir
// where l runs over in-service branches in file order and dir 0 is from->to,
// dir 1 is to->from. Unknowns are the non-slack angles followed by all N
// voltage magnitudes, so N_u = 2N - 1.

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "ggn/errors.hpp"
#include "ggn/nlls.hpp"
#include "ggn/psse/case_format.hpp"

namespace ggn::psse {

using Complex = std::complex<double>;
/// Writable row, possibly strided (a row of a column-major matrix).
using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

struct PowerState {
  Vector theta;
  Vector V;
};

/// Two-port Pi equivalent of one in-service branch.
struct PiBranch {
  int from = 0;
  int to = 0;
  Complex series;
  Complex shunt_from;
  Complex shunt_to;
};

/// Series y / tau, from-end shunt y (1 - tau) / tau^2 + j b / (2 tau^2),
/// to-end shunt y (tau - 1) / tau + j b / 2, with the tap on the from side.
[[nodiscard]] inline PiBranch pi_equivalent(const Branch& br, int from, int to) {
  const Complex y = 1.0 / Complex(br.r, br.x);
  const double tau = br.tap();
  const Complex half_b(0.0, br.b / 2.0);
  PiBranch p;
  p.from = from;
  p.to = to;
  p.series = y / tau;
  p.shunt_from = y * (1.0 - tau) / (tau * tau) + half_b / (tau * tau);
  p.shunt_to = y * (tau - 1.0) / tau + half_b;
  return p;
}

enum class MeasurementKind { InjectionP, InjectionQ, FlowP, FlowQ };

struct MeasurementInfo {
  MeasurementKind kind;
  /// Bus for injections, line for flows.
  int index = 0;
  /// Flow direction: 0 from->to, 1 to->from.
  int direction = 0;
};

class PsseModel {
 public:
  explicit PsseModel(GridModel grid) : grid_(std::move(grid)) {
    n_ = grid_.n_buses();
    if (n_ < 2) throw InvalidArgument("grid needs at least two buses");
    slack_ = grid_.slack_index();
    ybus_ = Eigen::MatrixXcd::Zero(n_, n_);
    for (const auto& br : grid_.branches) {
      if (br.status == 0) continue;
      const PiBranch p = pi_equivalent(br, grid_.bus_index(br.from), grid_.bus_index(br.to));
      ybus_(p.from, p.from) += p.series + p.shunt_from;
      ybus_(p.to, p.to) += p.series + p.shunt_to;
      ybus_(p.from, p.to) -= p.series;
      ybus_(p.to, p.from) -= p.series;
      lines_.push_back(p);
    }
    for (int n = 0; n < n_; ++n)
      ybus_(n, n) += Complex(grid_.buses[n].Gs, grid_.buses[n].Bs) / grid_.base_mva;
    neighbors_.resize(n_);
    for (int n = 0; n < n_; ++n)
      for (int m = 0; m < n_; ++m)
        if (m != n && ybus_(n, m) != Complex(0.0, 0.0)) neighbors_[n].push_back(m);
    theta_col_.assign(n_, -1);
    for (int n = 0, c = 0; n < n_; ++n)
      if (n != slack_) theta_col_[n] = c++;
  }

  [[nodiscard]] const GridModel& grid() const { return grid_; }
  [[nodiscard]] int n_buses() const { return n_; }
  [[nodiscard]] int n_lines() const { return static_cast<int>(lines_.size()); }
  [[nodiscard]] int slack() const { return slack_; }
  [[nodiscard]] Index n_unknowns() const { return 2 * n_ - 1; }
  [[nodiscard]] Index n_measurements() const { return 2 * n_ + 4 * n_lines(); }
  [[nodiscard]] const Eigen::MatrixXcd& admittance() const { return ybus_; }
  [[nodiscard]] const std::vector<PiBranch>& lines() const { return lines_; }
  [[nodiscard]] const std::vector<int>& neighbors(int n) const { return neighbors_[n]; }

  /// Unknown column of theta_n, or -1 for the slack bus.
  [[nodiscard]] int theta_column(int n) const { return theta_col_[n]; }
  [[nodiscard]] int v_column(int n) const { return n_ - 1 + n; }

  [[nodiscard]] MeasurementInfo describe(Index row) const {
    const Index L = n_lines();
    if (row < 0 || row >= n_measurements()) throw InvalidArgument("measurement row out of range");
    if (row < n_) return {MeasurementKind::InjectionP, static_cast<int>(row), 0};
    if (row < 2 * n_) return {MeasurementKind::InjectionQ, static_cast<int>(row - n_), 0};
    Index r = row - 2 * n_;
    const bool q = r >= 2 * L;
    if (q) r -= 2 * L;
    return {q ? MeasurementKind::FlowQ : MeasurementKind::FlowP, static_cast<int>(r / 2),
            static_cast<int>(r % 2)};
  }

  [[nodiscard]] PowerState to_state(const Vector& x) const {
    if (x.size() != n_unknowns()) throw InvalidArgument("state vector has wrong length");
    PowerState s{Vector::Zero(n_), x.tail(n_)};
    for (int n = 0; n < n_; ++n)
      if (theta_col_[n] >= 0) s.theta[n] = x[theta_col_[n]];
    return s;
  }

  [[nodiscard]] Vector to_unknowns(const PowerState& s) const {
    check_state(s);
    Vector x(n_unknowns());
    for (int n = 0; n < n_; ++n)
      if (theta_col_[n] >= 0) x[theta_col_[n]] = s.theta[n];
    x.tail(n_) = s.V;
    return x;
  }

  /// Box theta in [-theta_max, theta_max], V in [0, v_max].
  [[nodiscard]] BoxSet box(double theta_max = std::numbers::pi / 2, double v_max = 1.5) const {
    BoxSet b{Vector::Constant(n_unknowns(), -theta_max), Vector::Constant(n_unknowns(), theta_max)};
    b.lower.tail(n_).setZero();
    b.upper.tail(n_).setConstant(v_max);
    return b;
  }

  [[nodiscard]] double injection_p(const PowerState& s, int n) const {
    const Complex ynn = ybus_(n, n);
    double acc = s.V[n] * ynn.real();
    for (int m : neighbors_[n]) {
      const double t = s.theta[n] - s.theta[m];
      acc += s.V[m] * (ybus_(n, m).real() * std::cos(t) + ybus_(n, m).imag() * std::sin(t));
    }
    return s.V[n] * acc;
  }

  [[nodiscard]] double injection_q(const PowerState& s, int n) const {
    const Complex ynn = ybus_(n, n);
    double acc = -s.V[n] * ynn.imag();
    for (int m : neighbors_[n]) {
      const double t = s.theta[n] - s.theta[m];
      acc += s.V[m] * (ybus_(n, m).real() * std::sin(t) - ybus_(n, m).imag() * std::cos(t));
    }
    return s.V[n] * acc;
  }

  /// P and Q flow of line l leaving its from (dir 0) or to (dir 1) end.
  [[nodiscard]] std::pair<double, double> flow(const PowerState& s, int l, int dir) const {
    const auto e = end_terms(l, dir);
    const double Vn = s.V[e.n], Vm = s.V[e.m];
    const double t = s.theta[e.n] - s.theta[e.m];
    const double c = std::cos(t), sn = std::sin(t);
    const double p = Vn * Vn * (e.g + e.gs) - Vn * Vm * (e.g * c + e.b * sn);
    const double q = -Vn * Vn * (e.b + e.bs) - Vn * Vm * (e.g * sn - e.b * c);
    return {p, q};
  }

  [[nodiscard]] Vector power_injections(const PowerState& s) const {
    check_state(s);
    Vector f(2 * n_);
    for (int n = 0; n < n_; ++n) {
      f[n] = injection_p(s, n);
      f[n_ + n] = injection_q(s, n);
    }
    return f;
  }

  [[nodiscard]] Vector line_flows(const PowerState& s) const {
    check_state(s);
    const int L = n_lines();
    Vector f(4 * L);
    for (int l = 0; l < L; ++l)
      for (int dir = 0; dir < 2; ++dir) {
        const auto [p, q] = flow(s, l, dir);
        f[2 * l + dir] = p;
        f[2 * L + 2 * l + dir] = q;
      }
    return f;
  }

  /// Full measurement function f(x) = [injections; flows].
  [[nodiscard]] Vector measurements(const PowerState& s) const {
    Vector f(n_measurements());
    f.head(2 * n_) = power_injections(s);
    f.tail(4 * n_lines()) = line_flows(s);
    return f;
  }

  [[nodiscard]] double eval_row(const PowerState& s, Index row) const {
    const auto info = describe(row);
    switch (info.kind) {
      case MeasurementKind::InjectionP: return injection_p(s, info.index);
      case MeasurementKind::InjectionQ: return injection_q(s, info.index);
      case MeasurementKind::FlowP: return flow(s, info.index, info.direction).first;
      case MeasurementKind::FlowQ: return flow(s, info.index, info.direction).second;
    }
    return 0.0;
  }

  [[nodiscard]] Vector eval_rows(const PowerState& s, std::span<const Index> rows) const {
    check_state(s);
    Vector f(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) f[static_cast<Index>(r)] = eval_row(s, rows[r]);
    return f;
  }

  /// Writes df_row/dx into `out` (length N_u, assumed zeroed).
  void jacobian_row(const PowerState& s, Index row, RowRef out) const {
    const auto info = describe(row);
    switch (info.kind) {
      case MeasurementKind::InjectionP: injection_p_grad(s, info.index, out); break;
      case MeasurementKind::InjectionQ: injection_q_grad(s, info.index, out); break;
      case MeasurementKind::FlowP:
      case MeasurementKind::FlowQ:
        flow_grad(s, info.index, info.direction, info.kind == MeasurementKind::FlowQ, out);
        break;
    }
  }

  /// df/dx restricted to the given rows.
  [[nodiscard]] Matrix jacobian_rows(const PowerState& s, std::span<const Index> rows) const {
    check_state(s);
    Matrix J = Matrix::Zero(static_cast<Index>(rows.size()), n_unknowns());
    for (std::size_t r = 0; r < rows.size(); ++r) jacobian_row(s, rows[r], J.row(static_cast<Index>(r)));
    return J;
  }

  [[nodiscard]] Matrix measurement_jacobian(const PowerState& s) const {
    std::vector<Index> rows(n_measurements());
    for (Index r = 0; r < n_measurements(); ++r) rows[r] = r;
    return jacobian_rows(s, rows);
  }

 private:
  struct EndTerms {
    int n, m;
    double g, b, gs, bs;
  };

  [[nodiscard]] EndTerms end_terms(int l, int dir) const {
    const auto& p = lines_.at(l);
    const Complex sh = dir == 0 ? p.shunt_from : p.shunt_to;
    return {dir == 0 ? p.from : p.to, dir == 0 ? p.to : p.from, p.series.real(), p.series.imag(),
            sh.real(), sh.imag()};
  }

  void check_state(const PowerState& s) const {
    if (s.theta.size() != n_ || s.V.size() != n_) throw InvalidArgument("power state has wrong length");
  }

  void add(RowRef out, int theta_bus, double d_theta) const {
    if (theta_col_[theta_bus] >= 0) out[theta_col_[theta_bus]] += d_theta;
  }

  void injection_p_grad(const PowerState& s, int n, RowRef out) const {
    const double Vn = s.V[n];
    double d_theta_n = 0.0;
    double d_vn = 2.0 * Vn * ybus_(n, n).real();
    for (int m : neighbors_[n]) {
      const double G = ybus_(n, m).real(), B = ybus_(n, m).imag();
      const double t = s.theta[n] - s.theta[m];
      const double c = std::cos(t), sn = std::sin(t);
      const double dt = Vn * s.V[m] * (G * sn - B * c);
      d_theta_n -= dt;
      add(out, m, dt);
      d_vn += s.V[m] * (G * c + B * sn);
      out[v_column(m)] += Vn * (G * c + B * sn);
    }
    add(out, n, d_theta_n);
    out[v_column(n)] += d_vn;
  }

  void injection_q_grad(const PowerState& s, int n, RowRef out) const {
    const double Vn = s.V[n];
    double d_theta_n = 0.0;
    double d_vn = -2.0 * Vn * ybus_(n, n).imag();
    for (int m : neighbors_[n]) {
      const double G = ybus_(n, m).real(), B = ybus_(n, m).imag();
      const double t = s.theta[n] - s.theta[m];
      const double c = std::cos(t), sn = std::sin(t);
      const double dt = -Vn * s.V[m] * (G * c + B * sn);
      d_theta_n -= dt;
      add(out, m, dt);
      d_vn += s.V[m] * (G * sn - B * c);
      out[v_column(m)] += Vn * (G * sn - B * c);
    }
    add(out, n, d_theta_n);
    out[v_column(n)] += d_vn;
  }

  void flow_grad(const PowerState& s, int l, int dir, bool reactive,
                 RowRef out) const {
    const auto e = end_terms(l, dir);
    const double Vn = s.V[e.n], Vm = s.V[e.m];
    const double t = s.theta[e.n] - s.theta[e.m];
    const double c = std::cos(t), sn = std::sin(t);
    double dt, dvn, dvm;
    if (!reactive) {
      dt = Vn * Vm * (e.g * sn - e.b * c);
      dvn = 2.0 * Vn * (e.g + e.gs) - Vm * (e.g * c + e.b * sn);
      dvm = -Vn * (e.g * c + e.b * sn);
    } else {
      dt = -Vn * Vm * (e.g * c + e.b * sn);
      dvn = -2.0 * Vn * (e.b + e.bs) - Vm * (e.g * sn - e.b * c);
      dvm = -Vn * (e.g * sn - e.b * c);
    }
    add(out, e.n, dt);
    add(out, e.m, -dt);
    out[v_column(e.n)] += dvn;
    out[v_column(e.m)] += dvm;
  }

  GridModel grid_;
  int n_ = 0;
  int slack_ = 0;
  Eigen::MatrixXcd ybus_;
  std::vector<PiBranch> lines_;
  std::vector<std::vector<int>> neighbors_;
  std::vector<int> theta_col_;
};

/// S_n = V_n conj(sum_m Y_nm V_m) in complex arithmetic, stacked as [P; Q].
[[nodiscard]] inline Vector complex_injection_oracle(const PsseModel& model, const PowerState& s) {
  const int N = model.n_buses();
  Eigen::VectorXcd v(N);
  for (int n = 0; n < N; ++n) v[n] = std::polar(s.V[n], s.theta[n]);
  const Eigen::VectorXcd current = model.admittance() * v;
  Vector f(2 * N);
  for (int n = 0; n < N; ++n) {
    const Complex S = v[n] * std::conj(current[n]);
    f[n] = S.real();
    f[N + n] = S.imag();
  }
  return f;
}

/// S_nm = V_n conj((V_n - V_m) y + V_n ybar_n) per line and direction, in the flow layout.
[[nodiscard]] inline Vector complex_flow_oracle(const PsseModel& model, const PowerState& s) {
  const int L = model.n_lines();
  Vector f(4 * L);
  for (int l = 0; l < L; ++l) {
    const auto& p = model.lines()[l];
    for (int dir = 0; dir < 2; ++dir) {
      const int n = dir == 0 ? p.from : p.to;
      const int m = dir == 0 ? p.to : p.from;
      const Complex vn = std::polar(s.V[n], s.theta[n]);
      const Complex vm = std::polar(s.V[m], s.theta[m]);
      const Complex sh = dir == 0 ? p.shunt_from : p.shunt_to;
      const Complex S = vn * std::conj((vn - vm) * p.series + vn * sh);
      f[2 * l + dir] = S.real();
      f[2 * L + 2 * l + dir] = S.imag();
    }
  }
  return f;
}

}  // namespace ggn::psse
