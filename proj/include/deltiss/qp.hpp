#pragma once

#include "deltiss/common.hpp"

namespace deltiss::qp {

// Dense strictly convex QP
//   minimize 1/2 z'Hz + g'z   s.t.  A z = b,  C z <= d,
// solved by a primal-dual interior-point iteration with a Mehrotra-style
// corrector. H must be positive definite, which every caller here
// guarantees (stage costs and terminal weight are SPD). Sized for a few
// hundred variables.
struct QpResult {
  VectorXd z;
  VectorXd eq_mult, in_mult;
  enum class Status { Optimal, MaxIter, Failed } status = Status::Failed;
  int iterations = 0;
  double kkt = kInf;
};

inline QpResult solve_qp(const MatrixXd& H, const VectorXd& g, const MatrixXd& A,
                         const VectorXd& b, const MatrixXd& C, const VectorXd& d,
                         const VectorXd* z0 = nullptr, int max_iter = 60,
                         double tol = 1e-10) {
  const int n = static_cast<int>(H.rows());
  const int ne = static_cast<int>(A.rows());
  const int ni = static_cast<int>(C.rows());
  QpResult res;
  VectorXd z = z0 ? *z0 : VectorXd::Zero(n);
  VectorXd y = VectorXd::Zero(ne);

  if (ni == 0) {
    // equality-constrained QP: one saddle solve
    MatrixXd K(n + ne, n + ne);
    K << H, A.transpose(), A, MatrixXd::Zero(ne, ne);
    VectorXd rhs(n + ne);
    rhs << -g, b;
    const VectorXd sol = K.fullPivLu().solve(rhs);
    res.z = sol.head(n);
    res.eq_mult = sol.tail(ne);
    res.in_mult = VectorXd();
    res.kkt = (H * res.z + g + A.transpose() * res.eq_mult).cwiseAbs().maxCoeff();
    res.status = QpResult::Status::Optimal;
    return res;
  }

  const double scale = std::max({1.0, g.cwiseAbs().maxCoeff(),
                                 d.size() ? d.cwiseAbs().maxCoeff() : 1.0});
  VectorXd s = (d - C * z).cwiseMax(1e-2 * scale);
  VectorXd lam = VectorXd::Constant(ni, 1.0);

  for (int it = 0; it < max_iter; ++it) {
    const VectorXd r_d = H * z + g + A.transpose() * y + C.transpose() * lam;
    const VectorXd r_p = ne ? (A * z - b).eval() : VectorXd();
    const VectorXd r_i = C * z + s - d;
    const double mu = lam.dot(s) / ni;

    const double err = std::max({r_d.cwiseAbs().maxCoeff() / scale,
                                 ne ? r_p.cwiseAbs().maxCoeff() / scale : 0.0,
                                 r_i.cwiseAbs().maxCoeff() / scale, mu / scale});
    res.kkt = err;
    if (err <= tol) {
      res.z = z;
      res.eq_mult = y;
      res.in_mult = lam;
      res.status = QpResult::Status::Optimal;
      res.iterations = it;
      return res;
    }

    const VectorXd w = lam.cwiseQuotient(s);  // diag weights lambda/s
    MatrixXd G = H;
    G.noalias() += C.transpose() * w.asDiagonal() * C;
    Eigen::LLT<MatrixXd> Gf(G);
    if (Gf.info() != Eigen::Success) break;

    auto solve_dir = [&](const VectorXd& rc, VectorXd& dz, VectorXd& dy,
                         VectorXd& dlam, VectorXd& ds) {
      // eliminate (dlam, ds):
      //   ds = -r_i - C dz,  dlam = (-rc - lam o ds) / s
      const VectorXd tmp = (lam.cwiseProduct(r_i) - rc).cwiseQuotient(s);
      const VectorXd rhs = -r_d - C.transpose() * tmp;
      if (ne) {
        const MatrixXd GiAt = Gf.solve(A.transpose());
        const VectorXd Girhs = Gf.solve(rhs);
        const MatrixXd Sy = A * GiAt;
        dy = Sy.ldlt().solve(A * Girhs + r_p);
        dz = Girhs - GiAt * dy;
      } else {
        dy = VectorXd();
        dz = Gf.solve(rhs);
      }
      ds = -r_i - C * dz;
      dlam = (-rc - lam.cwiseProduct(ds)).cwiseQuotient(s);
    };

    auto max_step = [&](const VectorXd& v, const VectorXd& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i) {
        if (dv[i] < 0.0) a = std::min(a, -0.99 * v[i] / dv[i]);
      }
      return a;
    };

    // affine predictor
    VectorXd dz, dy, dlam, ds;
    solve_dir(lam.cwiseProduct(s), dz, dy, dlam, ds);
    const double a_aff = std::min(max_step(s, ds), max_step(lam, dlam));
    const double mu_aff =
        (lam + a_aff * dlam).dot(s + a_aff * ds) / ni;
    const double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);

    // corrector
    const VectorXd rc =
        lam.cwiseProduct(s) + dlam.cwiseProduct(ds) -
        VectorXd::Constant(ni, std::clamp(sigma, 0.0, 1.0) * mu);
    solve_dir(rc, dz, dy, dlam, ds);
    const double a = std::min(max_step(s, ds), max_step(lam, dlam));
    z += a * dz;
    if (ne) y += a * dy;
    lam += a * dlam;
    s += a * ds;
    res.iterations = it + 1;
    if (!z.allFinite()) break;
  }
  res.z = z;
  res.eq_mult = y;
  res.in_mult = lam;
  res.status = res.kkt <= 1e-7 ? QpResult::Status::MaxIter : QpResult::Status::Failed;
  return res;
}

}  // namespace deltiss::qp
