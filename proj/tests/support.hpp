#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ggn/nlls.hpp"
#include "ggn/psse/case_format.hpp"
#include "ggn/psse/network.hpp"

namespace ggn::test {

inline std::string data_path(const std::string& name) { return std::string(GGN_DATA_DIR) + "/" + name; }

inline std::shared_ptr<const psse::PsseModel> load_model(const std::string& name) {
  return std::make_shared<const psse::PsseModel>(psse::load_matpower_case(data_path(name)));
}

/// Angles within +-spread (slack at 0), magnitudes in [0.9, 1.1].
inline psse::PowerState random_state(const psse::PsseModel& m, std::mt19937_64& rng, double spread = 0.3) {
  std::uniform_real_distribution<double> th(-spread, spread), v(0.9, 1.1);
  psse::PowerState s{Vector(m.n_buses()), Vector(m.n_buses())};
  for (int n = 0; n < m.n_buses(); ++n) {
    s.theta[n] = n == m.slack() ? 0.0 : th(rng);
    s.V[n] = v(rng);
  }
  return s;
}

/// Affine site g(x) = b - A x, so G = -A.
inline SiteModel linear_site(int id, Matrix A, Vector b) {
  SiteModel s;
  s.site_id = id;
  s.residual_dim = A.rows();
  auto pa = std::make_shared<const Matrix>(std::move(A));
  auto pb = std::make_shared<const Vector>(std::move(b));
  s.eval_residual = [pa, pb](const Vector& x) -> Vector { return *pb - *pa * x; };
  s.eval_jacobian = [pa](const Vector&) -> Matrix { return -*pa; };
  return s;
}

/// Scalar-output site g(x) = z - (x0^2 + x1) and a linear partner, giving a small
/// nonlinear problem in two unknowns.
inline std::vector<SiteModel> toy_nonlinear_sites() {
  SiteModel a;
  a.site_id = 0;
  a.residual_dim = 2;
  a.eval_residual = [](const Vector& x) -> Vector {
    Vector g(2);
    g << 1.5 - (x[0] * x[0] + x[1]), 0.7 - x[0] * x[1];
    return g;
  };
  a.eval_jacobian = [](const Vector& x) -> Matrix {
    Matrix G(2, 2);
    G << -2 * x[0], -1.0, -x[1], -x[0];
    return G;
  };
  Matrix A(2, 2);
  A << 1.0, 0.5, -0.3, 1.0;
  Vector b(2);
  b << 1.4, 0.2;
  return {a, linear_site(1, A, b)};
}

inline BoxSet wide_box(Index n, double r = 10.0) {
  return {Vector::Constant(n, -r), Vector::Constant(n, r)};
}

}  // namespace ggn::test
