#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deltiss/geometry.hpp"
#include "deltiss/model.hpp"
#include "deltiss/sdp.hpp"

namespace deltiss::synth {

using model::RnnModel;
using model::SectorParams;
using model::Setpoint;

// ---------------------------------------------------------------------------
// Structural feasibility pre-checks (PBH rank tests)

namespace detail {

inline int complex_rank(const Eigen::MatrixXcd& M, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i) {
    if (svd.singularValues()[i] > tol) ++rank;
  }
  return rank;
}

}  // namespace detail

// PBH: (A, C) detectable iff rank [lambda I - A; C] = n for every eigenvalue
// with |lambda| >= 1.
inline bool check_detectability(const MatrixXd& A, const MatrixXd& C) {
  const int n = static_cast<int>(A.rows());
  const double tol = 1e-9 * std::max(1.0, A.norm());
  Eigen::EigenSolver<MatrixXd> es(A);
  for (int k = 0; k < n; ++k) {
    const std::complex<double> lam = es.eigenvalues()[k];
    if (std::abs(lam) < 1.0) continue;
    Eigen::MatrixXcd M(n + C.rows(), n);
    M.topRows(n) = lam * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    M.bottomRows(C.rows()) = C.cast<std::complex<double>>();
    if (detail::complex_rank(M, tol) < n) return false;
  }
  return true;
}

// Dual test: (A, B) stabilizable iff rank [lambda I - A, B] = n on |lambda| >= 1.
inline bool check_stabilizability(const MatrixXd& A, const MatrixXd& B) {
  const int n = static_cast<int>(A.rows());
  const double tol = 1e-9 * std::max(1.0, A.norm());
  Eigen::EigenSolver<MatrixXd> es(A);
  for (int k = 0; k < n; ++k) {
    const std::complex<double> lam = es.eigenvalues()[k];
    if (std::abs(lam) < 1.0) continue;
    Eigen::MatrixXcd M(n, n + B.cols());
    M.leftCols(n) = lam * Eigen::MatrixXcd::Identity(n, n) - A.cast<std::complex<double>>();
    M.rightCols(B.cols()) = B.cast<std::complex<double>>();
    if (detail::complex_rank(M, tol) < n) return false;
  }
  return true;
}

// Retry schedule for the sector/invariance parameters: walk gamma up to
// gamma_max in steps of eps_gamma, then grow H uniformly and restart gamma.
// Pure function.
inline std::pair<MatrixXd, double> parameters_update(MatrixXd H, double gamma,
                                                     double gamma_max,
                                                     double eps_h,
                                                     double eps_gamma) {
  if (gamma < gamma_max) return {std::move(H), gamma + eps_gamma};
  H += eps_h * MatrixXd::Identity(H.rows(), H.cols());
  return {std::move(H), 1.0};
}

// ---------------------------------------------------------------------------
// Design artifacts

struct ObserverDesign {
  MatrixXd L;        // n x p
  MatrixXd L_tilde;  // nu x p
  MatrixXd P_o;      // SPD n x n
  double gamma_o = 0.0;
  VectorXd s_o;  // diagonal of the sector multiplier S_o
  SectorParams sector;
  MatrixXd Q_ox, Q_owo;    // certified dissipation multipliers
  MatrixXd Q_w0, Q_eta0;   // disturbance shapes the design was built against

  geom::Ellipsoid rpi() const { return geom::Ellipsoid(P_o / gamma_o); }
  MatrixXd A_L(const RnnModel& m) const { return m.A() - L * m.C(); }
  // Shape of the combined controller-side disturbance (eta, e).
  MatrixXd Q_wc0(const RnnModel& m) const {
    const int p = m.p(), n = m.n();
    MatrixXd Q = MatrixXd::Zero(p + n, p + n);
    Q.topLeftCorner(p, p) = Q_eta0;
    Q.bottomRightCorner(n, n) = P_o / gamma_o;
    return Q;
  }
};

struct ControllerDesign {
  enum class Mode { Static, Tube };
  Mode mode = Mode::Static;
  MatrixXd K;    // m x n
  MatrixXd P_c;  // SPD n x n (inverse of the solver variable)
  double gamma_c = 0.0;
  SectorParams sector;
  VectorXd u_c;            // diagonal of U_c (= S_c^{-1})
  MatrixXd Q_cwc, Qt_cx;   // certified multipliers (Qt_cx in the Q_c frame)
  std::optional<Setpoint> setpoint;  // static mode only
  // Constraint polytopes the RPI sets were required to respect at design
  // time (static law operating inside input/output limits); absent when the
  // design was unconstrained.
  std::optional<geom::Polytope> contained_U, contained_Y;

  geom::Ellipsoid rpi() const { return geom::Ellipsoid(P_c / gamma_c); }
  MatrixXd A_K(const RnnModel& m) const { return m.A() + m.B() * K; }
  MatrixXd At_K(const RnnModel& m) const { return m.A_tilde() + m.B_tilde() * K; }
};

struct TerminalIngredients {
  MatrixXd P_f;  // SPD n x n
  double gamma_f = 0.0;
  VectorXd h_f;  // diagonal of H_f
  VectorXd s_f;  // diagonal of S_f
  Setpoint setpoint;

  geom::Ellipsoid terminal_set() const {
    return geom::Ellipsoid(P_f / gamma_f, setpoint.x_bar);
  }
};

struct TightenedSets {
  geom::Polytope U_tilde, Y_tilde;
  geom::Box V_c, V_o;
};

struct StageAttempt {
  std::string stage;  // observer_A, observer_B, controller, terminal
  VectorXd h;
  double gamma = 0.0;
  std::string outcome;  // feasible | infeasible | cert_failed | numerical_failure
};
using Transcript = std::vector<StageAttempt>;

struct SynthesisOptions {
  double gamma_max = 100.0;
  double eps_h = 0.1;
  double eps_gamma = 1.0;
  int budget = 2000;       // total stage solves across a synthesis call
  double tol_psd = 1e-7;   // certification tolerance
  bool maximize_roa = false;  // opt-in shaping of the static controller
  // Fraction of the combined disturbance shape admitted by the dissipation
  // bound. 0.5 makes the certified inequalities cover (eta, e) drawn
  // independently from their own sets rather than from the joint ellipsoid;
  // the as-printed bound (factor 1) is still re-certified afterwards.
  double wc_bound_scale = 0.5;
  double beta_f1 = 1.0, beta_f2 = 1.0;  // terminal objective weights
  double var_floor = 1e-7;              // positivity floor for matrix variables
  double assumption_margin = 1e-6;      // strict-interiority margin
  // Initial sector parameters (the procedure default is the global value 1;
  // larger values start the search regional).
  double h0_observer = 1.0;
  double h0_controller = 1.0;
};

// ---------------------------------------------------------------------------
// Matrix assembly for every condition. The solver closures and the
// post-solve certification call the same builders, so what is certified is
// exactly what was solved.

namespace detail {

inline MatrixXd sym_fill(MatrixXd upper) {
  return upper.selfadjointView<Eigen::Upper>();
}

// Observer dissipation condition (gains in the N = P_o L frame).
inline MatrixXd obs_dissipation(const RnnModel& m, const MatrixXd& H_o,
                                const MatrixXd& P_o, const MatrixXd& Q_ox,
                                const MatrixXd& Q_owo, const MatrixXd& N,
                                const MatrixXd& Nt, const MatrixXd& S_o) {
  const int n = m.n(), nu = m.nu(), d = m.d(), p = m.p();
  const int r1 = n, r2 = n + nu, r3 = n + nu + d + p;
  MatrixXd M = MatrixXd::Zero(r3 + n, r3 + n);
  M.block(0, 0, n, n) = P_o - Q_ox;
  M.block(0, r1, n, nu) =
      -m.A_tilde().transpose() * S_o + m.C().transpose() * Nt.transpose();
  M.block(0, r3, n, n) = m.A().transpose() * P_o - m.C().transpose() * N.transpose();
  M.block(r1, r1, nu, nu) = S_o * H_o + H_o * S_o;  // 2 S_o H_o
  M.block(r1, r2, nu, d) = -S_o * m.D_tilde();
  M.block(r1, r2 + d, nu, p) = Nt;
  M.block(r1, r3, nu, n) = m.B_q().transpose() * P_o;
  M.block(r2, r2, d + p, d + p) = Q_owo;
  M.block(r2, r3, d, n) = m.D().transpose() * P_o;
  M.block(r2 + d, r3, p, n) = N.transpose();
  M.block(r3, r3, n, n) = P_o;
  return sym_fill(M);
}

inline MatrixXd obs_noise_cap(const RnnModel& m, const MatrixXd& Q_w0,
                              const MatrixXd& Q_eta0, const MatrixXd& Q_owo) {
  const int d = m.d(), p = m.p();
  MatrixXd cap = MatrixXd::Zero(d + p, d + p);
  cap.topLeftCorner(d, d) = 0.5 * Q_w0;
  cap.bottomRightCorner(p, p) = 0.5 * Q_eta0;
  return cap - Q_owo;
}

// Locality of the plant-side argument v over the error and disturbance sets.
inline MatrixXd obs_locality_w(const RnnModel& m, const MatrixXd& Q_w0,
                               const MatrixXd& P_o, double gamma_o, int i,
                               double v_bar) {
  const int n = m.n(), d = m.d();
  MatrixXd M = MatrixXd::Zero(n + d + 1, n + d + 1);
  M.block(0, 0, n, n) = P_o / (2.0 * gamma_o);
  M.block(0, n + d, n, 1) = m.A_tilde().row(i).transpose();
  M.block(n, n, d, d) = 0.5 * Q_w0;
  M.block(n, n + d, d, 1) = m.D_tilde().row(i).transpose();
  M(n + d, n + d) = v_bar * v_bar;
  return sym_fill(M);
}

// Locality of the observer-side argument v_hat over the error and noise sets
// (gains in the N_tilde = S_o L_tilde frame, corner scaled by s_{o,i}^2).
inline MatrixXd obs_locality_eta(const RnnModel& m, const MatrixXd& Q_eta0,
                                 const MatrixXd& P_o, double gamma_o,
                                 const MatrixXd& Nt, double s_oi, int i,
                                 double v_bar) {
  const int n = m.n(), p = m.p();
  MatrixXd M = MatrixXd::Zero(n + p + 1, n + p + 1);
  const Eigen::RowVectorXd Nti = Nt.row(i);
  M.block(0, 0, n, n) = P_o / (2.0 * gamma_o);
  M.block(0, n + p, n, 1) = m.C().transpose() * Nti.transpose();
  M.block(n, n, p, p) = 0.5 * Q_eta0;
  M.block(n, n + p, p, 1) = Nti.transpose();
  M(n + p, n + p) = v_bar * v_bar * s_oi * s_oi;
  return sym_fill(M);
}

inline MatrixXd hstack(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

// [L, L C] and [Lt, Lt C]: how (eta, e) enters the closed-loop observer.
inline MatrixXd D_c(const RnnModel& m, const ObserverDesign& obs) {
  return hstack(obs.L, obs.L * m.C());
}
inline MatrixXd Dt_c(const RnnModel& m, const ObserverDesign& obs) {
  return hstack(obs.L_tilde, obs.L_tilde * m.C());
}

// Controller dissipation condition in the congruence-transformed frame
// (Q_c = P_c^{-1}, Z = K Q_c, U_c = S_c^{-1}).
inline MatrixXd ctrl_dissipation(const RnnModel& m, const ObserverDesign& obs,
                                 const MatrixXd& H_c, const MatrixXd& Q_c,
                                 const MatrixXd& Qt_cx, const MatrixXd& Q_cwc,
                                 const MatrixXd& U_c, const MatrixXd& Z) {
  const int n = m.n(), nu = m.nu(), w = m.p() + m.n();
  const int r1 = n, r2 = n + nu, r3 = n + nu + w;
  const MatrixXd Dc = D_c(m, obs), Dtc = Dt_c(m, obs);
  MatrixXd M = MatrixXd::Zero(r3 + n, r3 + n);
  M.block(0, 0, n, n) = Q_c - Qt_cx;
  M.block(0, r1, n, nu) =
      -Q_c * m.A_tilde().transpose() - Z.transpose() * m.B_tilde().transpose();
  M.block(0, r3, n, n) = Q_c * m.A().transpose() + Z.transpose() * m.B().transpose();
  M.block(r1, r1, nu, nu) = H_c * U_c + U_c * H_c;  // 2 H_c U_c
  M.block(r1, r2, nu, w) = -Dtc;
  M.block(r1, r3, nu, n) = U_c * m.B_q().transpose();
  M.block(r2, r2, w, w) = Q_cwc;
  M.block(r2, r3, w, n) = Dc.transpose();
  M.block(r3, r3, n, n) = Q_c;
  return sym_fill(M);
}

inline MatrixXd ctrl_noise_cap(const RnnModel& m, const ObserverDesign& obs,
                               const MatrixXd& Q_cwc, double scale) {
  return (scale * obs.Q_wc0(m) - Q_cwc).eval();
}

inline MatrixXd ctrl_invariance_gap(const RnnModel&, double gamma_c,
                                    const MatrixXd& Q_c, const MatrixXd& Qt_cx) {
  return (Qt_cx - Q_c / gamma_c).eval();
}

// Locality of v_hat over the tube cross-section and combined disturbance;
// corner is (v_bar - offset)^2 with offset = |At_i x_bar + Bt_i u_bar| for the
// static law and 0 for the tube law.
inline MatrixXd ctrl_locality(const RnnModel& m, const ObserverDesign& obs,
                              double gamma_c, const MatrixXd& Q_c,
                              const MatrixXd& Z, int i, double corner) {
  const int n = m.n(), w = m.p() + m.n();
  const MatrixXd Dtc = Dt_c(m, obs);
  MatrixXd M = MatrixXd::Zero(n + w + 1, n + w + 1);
  M.block(0, 0, n, n) = Q_c / (2.0 * gamma_c);
  M.block(0, n + w, n, 1) = Q_c * m.A_tilde().row(i).transpose() +
                            Z.transpose() * m.B_tilde().row(i).transpose();
  M.block(n, n, w, w) = 0.5 * obs.Q_wc0(m);
  M.block(n, n + w, w, 1) = Dtc.row(i).transpose();
  M(n + w, n + w) = corner * corner;
  return sym_fill(M);
}

// Locality of the observer argument under the closed loop: the plant-side
// route (error, process disturbance) and the innovation-side route (error,
// measurement noise), each sharing the tube term At_K (x_hat - anchor).
inline MatrixXd ctrl_obs_locality_w(const RnnModel& m, const ObserverDesign& obs,
                                    double gamma_c, const MatrixXd& Q_c,
                                    const MatrixXd& Z, int i, double corner,
                                    bool q_block_first) {
  const int n = m.n(), d = m.d();
  MatrixXd M = MatrixXd::Zero(n + n + d + 1, n + n + d + 1);
  const MatrixXd tube_col = Q_c * m.A_tilde().row(i).transpose() +
                            Z.transpose() * m.B_tilde().row(i).transpose();
  const MatrixXd err_col = m.A_tilde().row(i).transpose();
  const int qr = q_block_first ? 0 : n;
  const int er = q_block_first ? n : 0;
  M.block(qr, qr, n, n) = Q_c / (3.0 * gamma_c);
  M.block(qr, 2 * n + d, n, 1) = tube_col;
  M.block(er, er, n, n) = obs.P_o / (3.0 * obs.gamma_o);
  M.block(er, 2 * n + d, n, 1) = err_col;
  M.block(2 * n, 2 * n, d, d) = obs.Q_w0 / 3.0;
  M.block(2 * n, 2 * n + d, d, 1) = m.D_tilde().row(i).transpose();
  M(2 * n + d, 2 * n + d) = corner * corner;
  return sym_fill(M);
}

inline MatrixXd ctrl_obs_locality_eta(const RnnModel& m, const ObserverDesign& obs,
                                      double gamma_c, const MatrixXd& Q_c,
                                      const MatrixXd& Z, int i, double corner,
                                      bool q_block_first) {
  const int n = m.n(), p = m.p();
  MatrixXd M = MatrixXd::Zero(n + n + p + 1, n + n + p + 1);
  const MatrixXd tube_col = Q_c * m.A_tilde().row(i).transpose() +
                            Z.transpose() * m.B_tilde().row(i).transpose();
  const Eigen::RowVectorXd Lti = obs.L_tilde.row(i);
  const int qr = q_block_first ? 0 : n;
  const int er = q_block_first ? n : 0;
  M.block(qr, qr, n, n) = Q_c / (3.0 * gamma_c);
  M.block(qr, 2 * n + p, n, 1) = tube_col;
  M.block(er, er, n, n) = obs.P_o / (3.0 * obs.gamma_o);
  M.block(er, 2 * n + p, n, 1) = m.C().transpose() * Lti.transpose();
  M.block(2 * n, 2 * n, p, p) = obs.Q_eta0 / 3.0;
  M.block(2 * n, 2 * n + p, p, 1) = Lti.transpose();
  M(2 * n + p, 2 * n + p) = corner * corner;
  return sym_fill(M);
}

// Static-law input containment K E(P_c/gamma_c) + u_bar inside one input
// halfspace, in the (Q_c, Z) frame.
inline MatrixXd ctrl_input_box(const RnnModel& m, double gamma_c, const MatrixXd& Q_c,
                               const MatrixXd& Z, const Eigen::RowVectorXd& g_u,
                               double slack) {
  const int n = m.n();
  MatrixXd M = MatrixXd::Zero(n + 1, n + 1);
  M.block(0, 0, n, n) = Q_c / gamma_c;
  M.block(0, n, n, 1) = Z.transpose() * g_u.transpose();
  M(n, n) = slack * slack;
  return sym_fill(M);
}

// Static-law output containment C(E(P_c/gamma_c) + E(P_o/gamma_o)) + y_bar
// inside one output halfspace.
inline MatrixXd ctrl_output_box(const RnnModel& m, const ObserverDesign& obs,
                                double gamma_c, const MatrixXd& Q_c,
                                const Eigen::RowVectorXd& g_y, double slack) {
  const int n = m.n();
  MatrixXd M = MatrixXd::Zero(2 * n + 1, 2 * n + 1);
  M.block(0, 0, n, n) = Q_c / (2.0 * gamma_c);
  M.block(0, 2 * n, n, 1) = Q_c * m.C().transpose() * g_y.transpose();
  M.block(n, n, n, n) = obs.P_o / (2.0 * obs.gamma_o);
  M.block(n, 2 * n, n, 1) = m.C().transpose() * g_y.transpose();
  M(2 * n, 2 * n) = slack * slack;
  return sym_fill(M);
}

// Terminal dissipation under the auxiliary law (all gains fixed).
inline MatrixXd term_dissipation(const RnnModel& m, const MatrixXd& K,
                                 const MatrixXd& Lambda_x, const MatrixXd& Lambda_u,
                                 const MatrixXd& H_f, const MatrixXd& P_f,
                                 const MatrixXd& S_f) {
  const int n = m.n(), nu = m.nu();
  const MatrixXd A_K = m.A() + m.B() * K;
  const MatrixXd At_K = m.A_tilde() + m.B_tilde() * K;
  MatrixXd M = MatrixXd::Zero(n + nu + n, n + nu + n);
  M.block(0, 0, n, n) = P_f - Lambda_x - K.transpose() * Lambda_u * K;
  M.block(0, n, n, nu) = -At_K.transpose() * S_f;
  M.block(0, n + nu, n, n) = A_K.transpose() * P_f;
  M.block(n, n, nu, nu) = S_f * H_f + H_f * S_f;
  M.block(n, n + nu, nu, n) = m.B_q().transpose() * P_f;
  M.block(n + nu, n + nu, n, n) = P_f;
  return sym_fill(M);
}

// One terminal membership row: [P_f, g'; g, gamma_tilde * slack^2] >= 0 keeps
// |g (x - x_bar)| <= slack over the terminal ellipsoid.
inline MatrixXd term_row(const MatrixXd& P_f, double gamma_tilde,
                         const Eigen::RowVectorXd& g, double slack) {
  const int n = static_cast<int>(g.cols());
  MatrixXd M = MatrixXd::Zero(n + 1, n + 1);
  M.block(0, 0, n, n) = P_f;
  M.block(0, n, n, 1) = g.transpose();
  M(n, n) = gamma_tilde * slack * slack;
  return sym_fill(M);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Certification: rebuild every condition from the stored gains (back
// substitution N = P_o L, Z = K Q_c, ...) and report the smallest eigenvalue
// per named block. Independent of how the solution was obtained.

struct CertReport {
  std::vector<std::pair<std::string, double>> block_eigs;

  bool ok(double tol) const {
    for (const auto& [name, eig] : block_eigs) {
      if (eig < -tol) return false;
    }
    return true;
  }
  std::pair<std::string, double> worst() const {
    std::pair<std::string, double> w{"", kInf};
    for (const auto& be : block_eigs) {
      if (be.second < w.second) w = be;
    }
    return w;
  }
};

inline CertReport certify_observer(const RnnModel& m, const ObserverDesign& o) {
  CertReport rep;
  const MatrixXd N = o.P_o * o.L;
  const MatrixXd Nt = o.s_o.asDiagonal() * o.L_tilde;
  const MatrixXd S_o = MatrixXd(o.s_o.asDiagonal());
  rep.block_eigs.emplace_back(
      "5a", min_eig_sym(detail::obs_dissipation(m, o.sector.H(), o.P_o, o.Q_ox,
                                                o.Q_owo, N, Nt, S_o)));
  rep.block_eigs.emplace_back(
      "5b", min_eig_sym(detail::obs_noise_cap(m, o.Q_w0, o.Q_eta0, o.Q_owo)));
  rep.block_eigs.emplace_back("5c", min_eig_sym((o.Q_ox - o.P_o / o.gamma_o).eval()));
  for (int i : o.sector.active) {
    rep.block_eigs.emplace_back(
        "5d_" + std::to_string(i),
        min_eig_sym(detail::obs_locality_w(m, o.Q_w0, o.P_o, o.gamma_o, i,
                                           o.sector.v_bars[i])));
    rep.block_eigs.emplace_back(
        "5e_" + std::to_string(i),
        min_eig_sym(detail::obs_locality_eta(m, o.Q_eta0, o.P_o, o.gamma_o, Nt,
                                             o.s_o[i], i, o.sector.v_bars[i])));
  }
  return rep;
}

inline CertReport certify_controller(const RnnModel& m, const ObserverDesign& obs,
                                     const ControllerDesign& c) {
  CertReport rep;
  const MatrixXd Q_c = c.P_c.llt().solve(MatrixXd::Identity(m.n(), m.n()));
  const MatrixXd Z = c.K * Q_c;
  const MatrixXd U_c = MatrixXd(c.u_c.asDiagonal());
  rep.block_eigs.emplace_back(
      "8a", min_eig_sym(detail::ctrl_dissipation(m, obs, c.sector.H(), Q_c,
                                                 c.Qt_cx, c.Q_cwc, U_c, Z)));
  rep.block_eigs.emplace_back(
      "8b", min_eig_sym(detail::ctrl_noise_cap(m, obs, c.Q_cwc, 1.0)));
  rep.block_eigs.emplace_back(
      "8c", min_eig_sym(detail::ctrl_invariance_gap(m, c.gamma_c, Q_c, c.Qt_cx)));

  if (c.mode == ControllerDesign::Mode::Static) {
    require(c.setpoint.has_value(), "certify", "static design lacks a setpoint");
    const VectorXd v_eq = c.setpoint->v_eq(m);
    for (int i : c.sector.active) {
      const double corner = c.sector.v_bars[i] - std::abs(v_eq[i]);
      rep.block_eigs.emplace_back(
          "8d_" + std::to_string(i),
          min_eig_sym(detail::ctrl_locality(m, obs, c.gamma_c, Q_c, Z, i, corner)));
      rep.block_eigs.emplace_back("8g_" + std::to_string(i),
                                  corner);
    }
    for (int i : obs.sector.active) {
      const double corner = obs.sector.v_bars[i] - std::abs(v_eq[i]);
      rep.block_eigs.emplace_back(
          "8e_" + std::to_string(i),
          min_eig_sym(detail::ctrl_obs_locality_w(m, obs, c.gamma_c, Q_c, Z, i,
                                                  corner, true)));
      rep.block_eigs.emplace_back(
          "8f_" + std::to_string(i),
          min_eig_sym(detail::ctrl_obs_locality_eta(m, obs, c.gamma_c, Q_c, Z, i,
                                                    corner, true)));
      rep.block_eigs.emplace_back("8h_" + std::to_string(i), corner);
    }
    if (c.contained_U) {
      for (int s = 0; s < c.contained_U->rows(); ++s) {
        const double slack =
            c.contained_U->b[s] - (c.contained_U->G.row(s) * c.setpoint->u_bar).value();
        rep.block_eigs.emplace_back(
            "ubox_" + std::to_string(s),
            min_eig_sym(detail::ctrl_input_box(m, c.gamma_c, Q_c, Z,
                                               c.contained_U->G.row(s), slack)));
      }
    }
    if (c.contained_Y) {
      for (int r = 0; r < c.contained_Y->rows(); ++r) {
        const double slack =
            c.contained_Y->b[r] - (c.contained_Y->G.row(r) * c.setpoint->y_bar).value();
        rep.block_eigs.emplace_back(
            "ybox_" + std::to_string(r),
            min_eig_sym(detail::ctrl_output_box(m, obs, c.gamma_c, Q_c,
                                                c.contained_Y->G.row(r), slack)));
      }
    }
  } else {
    for (int i : c.sector.active) {
      rep.block_eigs.emplace_back(
          "13_" + std::to_string(i),
          min_eig_sym(detail::ctrl_locality(m, obs, c.gamma_c, Q_c, Z, i,
                                            c.sector.v_bars[i])));
    }
    for (int i : obs.sector.active) {
      rep.block_eigs.emplace_back(
          "14a_" + std::to_string(i),
          min_eig_sym(detail::ctrl_obs_locality_w(m, obs, c.gamma_c, Q_c, Z, i,
                                                  obs.sector.v_bars[i], false)));
      rep.block_eigs.emplace_back(
          "14b_" + std::to_string(i),
          min_eig_sym(detail::ctrl_obs_locality_eta(m, obs, c.gamma_c, Q_c, Z, i,
                                                    obs.sector.v_bars[i], false)));
    }
  }
  return rep;
}

inline CertReport certify_terminal(const RnnModel& m, const ObserverDesign& obs,
                                   const ControllerDesign& c,
                                   const MatrixXd& Lambda_x,
                                   const MatrixXd& Lambda_u,
                                   const TightenedSets& tight,
                                   const TerminalIngredients& t) {
  CertReport rep;
  const double gt = 1.0 / t.gamma_f;
  const MatrixXd H_f = MatrixXd(t.h_f.asDiagonal());
  const MatrixXd S_f = MatrixXd(t.s_f.asDiagonal());
  const MatrixXd At_K = c.At_K(m);
  const VectorXd v_eq = t.setpoint.v_eq(m);
  rep.block_eigs.emplace_back(
      "17b", min_eig_sym(detail::term_dissipation(m, c.K, Lambda_x, Lambda_u,
                                                  H_f, t.P_f, S_f)));
  for (int r = 0; r < tight.Y_tilde.rows(); ++r) {
    const Eigen::RowVectorXd g = tight.Y_tilde.G.row(r) * m.C();
    const double slack =
        tight.Y_tilde.b[r] - (tight.Y_tilde.G.row(r) * m.C() * t.setpoint.x_bar).value();
    rep.block_eigs.emplace_back("17c_" + std::to_string(r),
                                min_eig_sym(detail::term_row(t.P_f, gt, g, slack)));
  }
  for (int s = 0; s < tight.U_tilde.rows(); ++s) {
    const Eigen::RowVectorXd g = tight.U_tilde.G.row(s) * c.K;
    const double slack =
        tight.U_tilde.b[s] - (tight.U_tilde.G.row(s) * t.setpoint.u_bar).value();
    rep.block_eigs.emplace_back("17d_" + std::to_string(s),
                                min_eig_sym(detail::term_row(t.P_f, gt, g, slack)));
  }
  const auto acts = m.activations();
  for (int i = 0; i < m.nu(); ++i) {
    if (t.h_f[i] > 1.0) {
      const double vb = model::sector_bound(acts[i], t.h_f[i]);
      rep.block_eigs.emplace_back(
          "17e_" + std::to_string(i),
          min_eig_sym(detail::term_row(t.P_f, gt, At_K.row(i),
                                       vb - std::abs(v_eq[i]))));
    }
  }
  for (int i : c.sector.active) {
    rep.block_eigs.emplace_back(
        "17f_" + std::to_string(i),
        min_eig_sym(detail::term_row(t.P_f, gt, At_K.row(i),
                                     tight.V_c.half_widths[i] - std::abs(v_eq[i]))));
  }
  for (int i : obs.sector.active) {
    rep.block_eigs.emplace_back(
        "17g_" + std::to_string(i),
        min_eig_sym(detail::term_row(t.P_f, gt, At_K.row(i),
                                     tight.V_o.half_widths[i] - std::abs(v_eq[i]))));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Synthesis stages

namespace detail {

struct Budget {
  int remaining;
  void spend(const std::string& stage, const MatrixXd& H, double gamma) {
    if (remaining-- > 0) return;
    std::string hs;
    for (int i = 0; i < H.rows(); ++i) {
      hs += (i ? "," : "") + std::to_string(H(i, i));
    }
    throw Error("budget_exhausted", "stage-solve budget exhausted; first stuck stage " +
                                        stage + ", last H diag [" + hs +
                                        "], last gamma " + std::to_string(gamma));
  }
};

inline void record(Transcript* tr, std::string stage, const VectorXd& h,
                   double gamma, std::string outcome) {
  if (tr) tr->push_back({std::move(stage), h, gamma, std::move(outcome)});
}

}  // namespace detail

// Observer design (two-stage per outer iteration: the restricted problem
// without the innovation-locality condition decides the sector multiplier,
// which is then frozen to make the full problem linear).
inline ObserverDesign observer_synthesize(const RnnModel& m, const MatrixXd& Q_w0,
                                          const MatrixXd& Q_eta0,
                                          const SynthesisOptions& opts = {},
                                          Transcript* tr = nullptr) {
  require(check_detectability(m.A(), m.C()), "detectability",
          "observer synthesis requires (A, C) detectable");
  require(Q_w0.rows() == m.d() && Q_eta0.rows() == m.p(), "dimension",
          "disturbance shape matrices must match model dimensions");
  const int n = m.n(), nu = m.nu(), d = m.d(), p = m.p();

  MatrixXd H = opts.h0_observer * MatrixXd::Identity(nu, nu);
  double gamma = 1.0;
  detail::Budget budget{opts.budget};
  std::string last_fail = "none";

  while (true) {
    const SectorParams sector(H.diagonal(), m.activations());

    auto build_common = [&](sdp::LmiProblem& prob, int vP, int vQx, int vQw,
                            int vN, int vNt,
                            std::function<MatrixXd(const sdp::Values&)> S_of) {
      prob.require_psd("5a", [&, vP, vQx, vQw, vN, vNt, S_of](const sdp::Values& v) {
        return detail::obs_dissipation(m, H, v[vP], v[vQx], v[vQw], v[vN], v[vNt],
                                       S_of(v));
      });
      prob.require_psd("5b", [&, vQw](const sdp::Values& v) {
        return detail::obs_noise_cap(m, Q_w0, Q_eta0, v[vQw]);
      });
      prob.require_psd("5c", [&, vP, vQx](const sdp::Values& v) {
        return (v[vQx] - v[vP] / gamma).eval();
      });
      for (int i : sector.active) {
        prob.require_psd("5d_" + std::to_string(i), [&, vP, i](const sdp::Values& v) {
          return detail::obs_locality_w(m, Q_w0, v[vP], gamma, i,
                                        sector.v_bars[i]);
        });
      }
    };

    // Stage A: decide S_o with the innovation-locality rows left out.
    VectorXd s_diag;
    {
      budget.spend("observer_A", H, gamma);
      sdp::LmiProblem prob;
      const int vP = prob.symmetric("P_o", n);
      const int vQx = prob.symmetric("Q_ox", n);
      const int vQw = prob.symmetric("Q_owo", d + p);
      const int vN = prob.rectangular("N", n, p);
      const int vNt = prob.rectangular("N_tilde", nu, p);
      const int vS = prob.diagonal("S_o", nu);
      const int vB = prob.scalar("beta");
      build_common(prob, vP, vQx, vQw, vN, vNt,
                   [vS](const sdp::Values& v) { return v[vS]; });
      prob.require_psd("s_floor", [&, vS](const sdp::Values& v) {
        return (v[vS] - opts.var_floor * MatrixXd::Identity(nu, nu)).eval();
      });
      prob.require_psd("p_beta", [vP, vB, n](const sdp::Values& v) {
        return (v[vP] - v[vB](0, 0) * MatrixXd::Identity(n, n)).eval();
      });
      prob.require_psd("beta_floor", [&, vB](const sdp::Values& v) {
        return (v[vB].array() - opts.var_floor).matrix().eval();
      });
      prob.minimize([vB](const sdp::Values& v) { return -v[vB](0, 0); });
      const auto sol = prob.solve(opts.tol_psd);
      if (sol.status != sdp::SolveStatus::Feasible) {
        detail::record(tr, "observer_A", H.diagonal(), gamma,
                       to_string(sol.status));
        last_fail = "observer_A";
        std::tie(H, gamma) =
            parameters_update(H, gamma, opts.gamma_max, opts.eps_h, opts.eps_gamma);
        continue;
      }
      detail::record(tr, "observer_A", H.diagonal(), gamma, "feasible");
      s_diag = sol.values[vS].diagonal();
    }

    // Stage B: freeze S_o, solve the full set including innovation locality.
    {
      budget.spend("observer_B", H, gamma);
      const MatrixXd S_o = MatrixXd(s_diag.asDiagonal());
      sdp::LmiProblem prob;
      const int vP = prob.symmetric("P_o", n);
      const int vQx = prob.symmetric("Q_ox", n);
      const int vQw = prob.symmetric("Q_owo", d + p);
      const int vN = prob.rectangular("N", n, p);
      const int vNt = prob.rectangular("N_tilde", nu, p);
      const int vB = prob.scalar("beta");
      build_common(prob, vP, vQx, vQw, vN, vNt,
                   [S_o](const sdp::Values&) { return S_o; });
      for (int i : sector.active) {
        prob.require_psd("5e_" + std::to_string(i), [&, vP, vNt, i](const sdp::Values& v) {
          return detail::obs_locality_eta(m, Q_eta0, v[vP], gamma, v[vNt],
                                          s_diag[i], i, sector.v_bars[i]);
        });
      }
      prob.require_psd("p_beta", [vP, vB, n](const sdp::Values& v) {
        return (v[vP] - v[vB](0, 0) * MatrixXd::Identity(n, n)).eval();
      });
      prob.require_psd("beta_floor", [&, vB](const sdp::Values& v) {
        return (v[vB].array() - opts.var_floor).matrix().eval();
      });
      prob.minimize([vB](const sdp::Values& v) { return -v[vB](0, 0); });
      const auto sol = prob.solve(opts.tol_psd);
      if (sol.status == sdp::SolveStatus::Feasible) {
        ObserverDesign out;
        out.P_o = 0.5 * (sol.values[vP] + sol.values[vP].transpose());
        out.gamma_o = gamma;
        out.s_o = s_diag;
        out.sector = sector;
        out.Q_ox = sol.values[vQx];
        out.Q_owo = sol.values[vQw];
        out.Q_w0 = Q_w0;
        out.Q_eta0 = Q_eta0;
        out.L = out.P_o.llt().solve(sol.values[vN]);
        out.L_tilde = s_diag.cwiseInverse().asDiagonal() * sol.values[vNt];
        if (certify_observer(m, out).ok(opts.tol_psd)) {
          detail::record(tr, "observer_B", H.diagonal(), gamma, "feasible");
          return out;
        }
        detail::record(tr, "observer_B", H.diagonal(), gamma, "cert_failed");
        last_fail = "observer_B";
      } else {
        detail::record(tr, "observer_B", H.diagonal(), gamma, to_string(sol.status));
        last_fail = "observer_B";
      }
      std::tie(H, gamma) =
          parameters_update(H, gamma, opts.gamma_max, opts.eps_h, opts.eps_gamma);
    }
  }
}

namespace detail {

struct CtrlStageResult {
  ControllerDesign design;
  bool ok = false;
  std::string outcome;
};

// Shared controller LMI stage; `mode` decides the locality family and the
// shaping objective. For the static law, optional constraint polytopes add
// the containment rows keeping K E_c + u_bar and C(E_c + E_o) + y_bar inside
// the operating limits.
inline CtrlStageResult controller_stage(const RnnModel& m, const ObserverDesign& obs,
                                        const SectorParams& sector, double gamma_c,
                                        ControllerDesign::Mode mode,
                                        const std::optional<Setpoint>& sp,
                                        const SynthesisOptions& opts,
                                        const geom::Polytope* U_box = nullptr,
                                        const geom::Polytope* Y_box = nullptr) {
  const int n = m.n(), nu = m.nu(), w = m.p() + m.n();
  sdp::LmiProblem prob;
  const int vQ = prob.symmetric("Q_c", n);
  const int vQx = prob.symmetric("Qt_cx", n);
  const int vQw = prob.symmetric("Q_cwc", w);
  const int vU = prob.diagonal("U_c", nu);
  const int vZ = prob.rectangular("Z", m.m(), n);

  prob.require_psd("8a", [&, vQ, vQx, vQw, vU, vZ](const sdp::Values& v) {
    return ctrl_dissipation(m, obs, sector.H(), v[vQ], v[vQx], v[vQw], v[vU], v[vZ]);
  });
  prob.require_psd("8b", [&, vQw](const sdp::Values& v) {
    return ctrl_noise_cap(m, obs, v[vQw], opts.wc_bound_scale);
  });
  prob.require_psd("8c", [&, vQ, vQx](const sdp::Values& v) {
    return ctrl_invariance_gap(m, gamma_c, v[vQ], v[vQx]);
  });

  const VectorXd v_eq = sp ? sp->v_eq(m) : VectorXd::Zero(nu);
  for (int i : sector.active) {
    const double corner = (mode == ControllerDesign::Mode::Static)
                              ? sector.v_bars[i] - std::abs(v_eq[i])
                              : sector.v_bars[i];
    const std::string name =
        (mode == ControllerDesign::Mode::Static ? "8d_" : "13_") + std::to_string(i);
    prob.require_psd(name, [&, vQ, vZ, i, corner](const sdp::Values& v) {
      return ctrl_locality(m, obs, gamma_c, v[vQ], v[vZ], i, corner);
    });
  }
  const bool q_first = (mode == ControllerDesign::Mode::Static);
  for (int i : obs.sector.active) {
    const double corner = (mode == ControllerDesign::Mode::Static)
                              ? obs.sector.v_bars[i] - std::abs(v_eq[i])
                              : obs.sector.v_bars[i];
    const std::string base =
        (mode == ControllerDesign::Mode::Static) ? "8e_" : "14a_";
    const std::string base2 =
        (mode == ControllerDesign::Mode::Static) ? "8f_" : "14b_";
    prob.require_psd(base + std::to_string(i),
                     [&, vQ, vZ, i, corner](const sdp::Values& v) {
                       return ctrl_obs_locality_w(m, obs, gamma_c, v[vQ], v[vZ], i,
                                                  corner, q_first);
                     });
    prob.require_psd(base2 + std::to_string(i),
                     [&, vQ, vZ, i, corner](const sdp::Values& v) {
                       return ctrl_obs_locality_eta(m, obs, gamma_c, v[vQ], v[vZ],
                                                    i, corner, q_first);
                     });
  }

  if (U_box) {
    require(sp.has_value(), "containment", "input containment needs a setpoint");
    for (int s = 0; s < U_box->rows(); ++s) {
      const double slack = U_box->b[s] - (U_box->G.row(s) * sp->u_bar).value();
      require(slack > 0.0, "setpoint_outside_constraints",
              "setpoint input violates constraint row " + std::to_string(s));
      prob.require_psd("ubox_" + std::to_string(s),
                       [&, vQ, vZ, s, slack](const sdp::Values& v) {
                         return ctrl_input_box(m, gamma_c, v[vQ], v[vZ],
                                               U_box->G.row(s), slack);
                       });
    }
  }
  if (Y_box) {
    require(sp.has_value(), "containment", "output containment needs a setpoint");
    for (int r = 0; r < Y_box->rows(); ++r) {
      const double slack = Y_box->b[r] - (Y_box->G.row(r) * sp->y_bar).value();
      require(slack > 0.0, "setpoint_outside_constraints",
              "setpoint output violates constraint row " + std::to_string(r));
      prob.require_psd("ybox_" + std::to_string(r),
                       [&, vQ, r, slack](const sdp::Values& v) {
                         return ctrl_output_box(m, obs, gamma_c, v[vQ],
                                                Y_box->G.row(r), slack);
                       });
    }
  }

  prob.require_psd("q_floor", [&, vQ](const sdp::Values& v) {
    return (v[vQ] - opts.var_floor * MatrixXd::Identity(n, n)).eval();
  });
  prob.require_psd("u_floor", [&, vU](const sdp::Values& v) {
    return (v[vU] - opts.var_floor * MatrixXd::Identity(nu, nu)).eval();
  });

  if (mode == ControllerDesign::Mode::Tube) {
    const int vB = prob.scalar("beta_c");
    prob.require_psd("q_cap", [vQ, vB, n](const sdp::Values& v) {
      return (v[vB](0, 0) * MatrixXd::Identity(n, n) - v[vQ]).eval();
    });
    prob.minimize([vB](const sdp::Values& v) { return v[vB](0, 0); });
  } else if (opts.maximize_roa) {
    const int vB = prob.scalar("beta");
    prob.require_psd("q_beta", [vQ, vB, n](const sdp::Values& v) {
      return (v[vQ] - v[vB](0, 0) * MatrixXd::Identity(n, n)).eval();
    });
    prob.minimize([vB](const sdp::Values& v) { return -v[vB](0, 0); });
  }

  const auto sol = prob.solve(opts.tol_psd);
  CtrlStageResult out;
  if (sol.status != sdp::SolveStatus::Feasible) {
    out.outcome = to_string(sol.status);
    return out;
  }
  const MatrixXd Q_c = 0.5 * (sol.values[vQ] + sol.values[vQ].transpose());
  ControllerDesign d;
  d.mode = mode;
  d.P_c = Q_c.llt().solve(MatrixXd::Identity(n, n));
  d.P_c = 0.5 * (d.P_c + d.P_c.transpose());
  d.K = sol.values[vZ] * d.P_c;
  d.gamma_c = gamma_c;
  d.sector = sector;
  d.u_c = sol.values[vU].diagonal();
  d.Q_cwc = sol.values[vQw];
  d.Qt_cx = sol.values[vQx];
  d.setpoint = sp;
  if (U_box) d.contained_U = *U_box;
  if (Y_box) d.contained_Y = *Y_box;
  if (!certify_controller(m, obs, d).ok(opts.tol_psd)) {
    out.outcome = "cert_failed";
    return out;
  }
  out.design = std::move(d);
  out.ok = true;
  out.outcome = "feasible";
  return out;
}

}  // namespace detail

// Static tracking controller. The scalar sector-margin preconditions at the
// setpoint are evaluated before any solve; a violated observer-side margin
// cannot be repaired by the retry schedule, so it rejects the setpoint.
inline ControllerDesign controller_synthesize_static(const RnnModel& m,
                                                     const ObserverDesign& obs,
                                                     const Setpoint& sp,
                                                     const SynthesisOptions& opts = {},
                                                     Transcript* tr = nullptr,
                                                     const geom::Polytope* U_box = nullptr,
                                                     const geom::Polytope* Y_box = nullptr) {
  require(check_stabilizability(m.A(), m.B()), "stabilizability",
          "controller synthesis requires (A, B) stabilizable");
  const int nu = m.nu();
  const VectorXd v_eq = sp.v_eq(m);
  for (int i : obs.sector.active) {
    require(obs.sector.v_bars[i] >= std::abs(v_eq[i]), "setpoint_margin_obs",
            "setpoint violates the observer-side sector margin (channel " +
                std::to_string(i) + ")");
  }

  MatrixXd H = opts.h0_controller * MatrixXd::Identity(nu, nu);
  double gamma = 1.0;
  detail::Budget budget{opts.budget};
  while (true) {
    const SectorParams sector(H.diagonal(), m.activations());
    for (int i : sector.active) {
      require(sector.v_bars[i] >= std::abs(v_eq[i]), "setpoint_margin_ctrl",
              "setpoint violates the controller-side sector margin (channel " +
                  std::to_string(i) + ")");
    }
    budget.spend("controller", H, gamma);
    auto res = detail::controller_stage(m, obs, sector, gamma,
                                        ControllerDesign::Mode::Static, sp, opts,
                                        U_box, Y_box);
    detail::record(tr, "controller", H.diagonal(), gamma, res.outcome);
    if (res.ok) return std::move(res.design);
    std::tie(H, gamma) =
        parameters_update(H, gamma, opts.gamma_max, opts.eps_h, opts.eps_gamma);
  }
}

// Tube ancillary controller: setpoint-independent, shaped toward the
// tightest cross-section.
inline ControllerDesign controller_synthesize_tube(const RnnModel& m,
                                                   const ObserverDesign& obs,
                                                   const SynthesisOptions& opts = {},
                                                   Transcript* tr = nullptr) {
  require(check_stabilizability(m.A(), m.B()), "stabilizability",
          "controller synthesis requires (A, B) stabilizable");
  MatrixXd H = opts.h0_controller * MatrixXd::Identity(m.nu(), m.nu());
  double gamma = 1.0;
  detail::Budget budget{opts.budget};
  while (true) {
    const SectorParams sector(H.diagonal(), m.activations());
    budget.spend("controller", H, gamma);
    auto res = detail::controller_stage(m, obs, sector, gamma,
                                        ControllerDesign::Mode::Tube,
                                        std::nullopt, opts);
    detail::record(tr, "controller", H.diagonal(), gamma, res.outcome);
    if (res.ok) return std::move(res.design);
    std::tie(H, gamma) =
        parameters_update(H, gamma, opts.gamma_max, opts.eps_h, opts.eps_gamma);
  }
}

// Rowwise constraint tightening and locality boxes. Supports of independent
// ellipsoids add, so every maximum is closed-form; any non-positive offset or
// half-width is an emptiness error naming the row.
inline TightenedSets build_tightened_sets(const RnnModel& m,
                                          const ObserverDesign& obs,
                                          const ControllerDesign& ctrl,
                                          const geom::Polytope& U,
                                          const geom::Polytope& Y) {
  require(U.dim() == m.m() && Y.dim() == m.p(), "dimension",
          "constraint polytopes must match input/output dimensions");
  const geom::Ellipsoid E_c = ctrl.rpi();
  const geom::Ellipsoid E_o = obs.rpi();
  const geom::Ellipsoid E_w{obs.Q_w0};
  const geom::Ellipsoid E_eta{obs.Q_eta0};
  const MatrixXd At_K = ctrl.At_K(m);

  VectorXd bu(U.rows());
  for (int s = 0; s < U.rows(); ++s) {
    bu[s] = U.b[s] - E_c.support(ctrl.K, U.G.row(s).transpose());
    require(bu[s] >= 0.0, "empty_tightened_set",
            "input constraint row " + std::to_string(s) + " tightens to empty");
  }
  VectorXd by(Y.rows());
  for (int r = 0; r < Y.rows(); ++r) {
    by[r] = Y.b[r] - E_o.support(m.C(), Y.G.row(r).transpose()) -
            E_c.support(m.C(), Y.G.row(r).transpose());
    require(by[r] >= 0.0, "empty_tightened_set",
            "output constraint row " + std::to_string(r) + " tightens to empty");
  }

  const VectorXd one = VectorXd::Ones(1);
  VectorXd vc = VectorXd::Constant(m.nu(), kInf);
  for (int i : ctrl.sector.active) {
    const double reach = E_c.support(At_K.row(i), one) +
                         E_eta.support(obs.L_tilde.row(i), one) +
                         E_o.support((obs.L_tilde.row(i) * m.C()).eval(), one);
    vc[i] = ctrl.sector.v_bars[i] - reach;
    require(vc[i] > 0.0, "empty_tightened_set",
            "controller locality box is empty in channel " + std::to_string(i));
  }
  VectorXd vo = VectorXd::Constant(m.nu(), kInf);
  for (int i : obs.sector.active) {
    const double plant_route = E_o.support(m.A_tilde().row(i), one) +
                               E_w.support(m.D_tilde().row(i), one) +
                               E_c.support(At_K.row(i), one);
    const double innov_route = E_o.support((obs.L_tilde.row(i) * m.C()).eval(), one) +
                               E_eta.support(obs.L_tilde.row(i), one) +
                               E_c.support(At_K.row(i), one);
    vo[i] = obs.sector.v_bars[i] - std::max(plant_route, innov_route);
    require(vo[i] > 0.0, "empty_tightened_set",
            "observer locality box is empty in channel " + std::to_string(i));
  }
  return TightenedSets{geom::Polytope(U.G, bu), geom::Polytope(Y.G, by),
                       geom::Box(vc), geom::Box(vo)};
}

// Terminal set and cost for the receding-horizon scheme, grown as large as
// the tightened constraints allow around the target equilibrium.
inline TerminalIngredients terminal_synthesize(const RnnModel& m, const MatrixXd& K,
                                               const MatrixXd& Lambda_x,
                                               const MatrixXd& Lambda_u,
                                               const TightenedSets& tight,
                                               const ObserverDesign& obs,
                                               const ControllerDesign& ctrl,
                                               const Setpoint& sp,
                                               const SynthesisOptions& opts = {},
                                               Transcript* tr = nullptr) {
  const int n = m.n(), nu = m.nu();
  const VectorXd v_eq = sp.v_eq(m);
  const MatrixXd At_K = ctrl.At_K(m);

  // strict interiority of the target (margins must absorb the LMI corners)
  std::vector<std::pair<Eigen::RowVectorXd, double>> rows;  // (g, slack)
  for (int r = 0; r < tight.Y_tilde.rows(); ++r) {
    const double slack =
        tight.Y_tilde.b[r] - (tight.Y_tilde.G.row(r) * m.C() * sp.x_bar).value();
    require(slack >= opts.assumption_margin, "terminal_17c",
            "target output is not strictly inside the tightened output set (row " +
                std::to_string(r) + ")");
    rows.emplace_back(tight.Y_tilde.G.row(r) * m.C(), slack);
  }
  std::vector<std::pair<Eigen::RowVectorXd, double>> urows;
  for (int s = 0; s < tight.U_tilde.rows(); ++s) {
    const double slack =
        tight.U_tilde.b[s] - (tight.U_tilde.G.row(s) * sp.u_bar).value();
    require(slack >= opts.assumption_margin, "terminal_17d",
            "target input is not strictly inside the tightened input set (row " +
                std::to_string(s) + ")");
    urows.emplace_back(tight.U_tilde.G.row(s) * K, slack);
  }
  for (int i : ctrl.sector.active) {
    require(tight.V_c.half_widths[i] - std::abs(v_eq[i]) >= opts.assumption_margin,
            "assumption7_vc",
            "equilibrium argument leaves the controller locality box");
  }
  for (int i : obs.sector.active) {
    require(tight.V_o.half_widths[i] - std::abs(v_eq[i]) >= opts.assumption_margin,
            "assumption7_vo",
            "equilibrium argument leaves the observer locality box");
  }

  MatrixXd H_f = MatrixXd::Identity(nu, nu);
  detail::Budget budget{opts.budget};
  while (true) {
    budget.spend("terminal", H_f, 0.0);
    const SectorParams sector_f(H_f.diagonal(), m.activations());
    bool corner_ok = true;
    for (int i : sector_f.active) {
      if (sector_f.v_bars[i] - std::abs(v_eq[i]) <= 0.0) corner_ok = false;
    }
    if (!corner_ok) {
      detail::record(tr, "terminal", H_f.diagonal(), 0.0, "infeasible");
      throw Error("terminal_margin",
                  "terminal sector margin vanished while growing H_f");
    }

    sdp::LmiProblem prob;
    const int vP = prob.symmetric("P_f", n);
    const int vS = prob.diagonal("S_f", nu);
    const int vG = prob.scalar("gamma_tilde_f");
    prob.require_psd("17b", [&, vP, vS](const sdp::Values& v) {
      return detail::term_dissipation(m, K, Lambda_x, Lambda_u, H_f, v[vP], v[vS]);
    });
    for (std::size_t r = 0; r < rows.size(); ++r) {
      prob.require_psd("17c_" + std::to_string(r), [&, vP, vG, r](const sdp::Values& v) {
        return detail::term_row(v[vP], v[vG](0, 0), rows[r].first, rows[r].second);
      });
    }
    for (std::size_t s = 0; s < urows.size(); ++s) {
      prob.require_psd("17d_" + std::to_string(s), [&, vP, vG, s](const sdp::Values& v) {
        return detail::term_row(v[vP], v[vG](0, 0), urows[s].first, urows[s].second);
      });
    }
    for (int i : sector_f.active) {
      const double slack = sector_f.v_bars[i] - std::abs(v_eq[i]);
      prob.require_psd("17e_" + std::to_string(i), [&, vP, vG, i, slack](const sdp::Values& v) {
        return detail::term_row(v[vP], v[vG](0, 0), At_K.row(i), slack);
      });
    }
    for (int i : ctrl.sector.active) {
      const double slack = tight.V_c.half_widths[i] - std::abs(v_eq[i]);
      prob.require_psd("17f_" + std::to_string(i), [&, vP, vG, i, slack](const sdp::Values& v) {
        return detail::term_row(v[vP], v[vG](0, 0), At_K.row(i), slack);
      });
    }
    for (int i : obs.sector.active) {
      const double slack = tight.V_o.half_widths[i] - std::abs(v_eq[i]);
      prob.require_psd("17g_" + std::to_string(i), [&, vP, vG, i, slack](const sdp::Values& v) {
        return detail::term_row(v[vP], v[vG](0, 0), At_K.row(i), slack);
      });
    }
    prob.require_psd("p_floor", [&, vP](const sdp::Values& v) {
      return (v[vP] - opts.var_floor * MatrixXd::Identity(n, n)).eval();
    });
    prob.require_psd("s_floor", [&, vS](const sdp::Values& v) {
      return (v[vS] - opts.var_floor * MatrixXd::Identity(nu, nu)).eval();
    });
    prob.require_psd("g_floor", [&, vG](const sdp::Values& v) {
      return (v[vG].array() - opts.var_floor).matrix().eval();
    });
    prob.minimize([&, vP, vG](const sdp::Values& v) {
      return opts.beta_f1 * v[vP].trace() + opts.beta_f2 * v[vG](0, 0);
    });

    const auto sol = prob.solve(opts.tol_psd);
    if (sol.status == sdp::SolveStatus::Feasible) {
      TerminalIngredients t;
      t.P_f = 0.5 * (sol.values[vP] + sol.values[vP].transpose());
      t.gamma_f = 1.0 / sol.values[vG](0, 0);
      t.h_f = H_f.diagonal();
      t.s_f = sol.values[vS].diagonal();
      t.setpoint = sp;
      if (certify_terminal(m, obs, ctrl, Lambda_x, Lambda_u, tight, t).ok(opts.tol_psd)) {
        detail::record(tr, "terminal", H_f.diagonal(), 0.0, "feasible");
        return t;
      }
      detail::record(tr, "terminal", H_f.diagonal(), 0.0, "cert_failed");
    } else {
      detail::record(tr, "terminal", H_f.diagonal(), 0.0, to_string(sol.status));
    }
    H_f += opts.eps_h * MatrixXd::Identity(nu, nu);
  }
}

// ---------------------------------------------------------------------------
// Pipelines

struct StaticPipelineResult {
  ObserverDesign observer;
  ControllerDesign controller;
  Transcript transcript;
};

inline StaticPipelineResult design_static_pipeline(const RnnModel& m,
                                                   const Setpoint& sp,
                                                   const MatrixXd& Q_w0,
                                                   const MatrixXd& Q_eta0,
                                                   const SynthesisOptions& opts = {}) {
  StaticPipelineResult out;
  out.observer = observer_synthesize(m, Q_w0, Q_eta0, opts, &out.transcript);
  out.controller =
      controller_synthesize_static(m, out.observer, sp, opts, &out.transcript);
  return out;
}

struct TubePipelineResult {
  ObserverDesign observer;
  ControllerDesign controller;
  TerminalIngredients terminal;
  TightenedSets tight;
  Transcript transcript;
};

inline TubePipelineResult design_tube_pipeline(const RnnModel& m, const Setpoint& sp,
                                               const MatrixXd& Q_w0,
                                               const MatrixXd& Q_eta0,
                                               const geom::Polytope& U,
                                               const geom::Polytope& Y,
                                               const MatrixXd& Lambda_x,
                                               const MatrixXd& Lambda_u,
                                               const SynthesisOptions& opts = {}) {
  Transcript tr;
  ObserverDesign obs = observer_synthesize(m, Q_w0, Q_eta0, opts, &tr);
  ControllerDesign ctrl = controller_synthesize_tube(m, obs, opts, &tr);
  TightenedSets tight = build_tightened_sets(m, obs, ctrl, U, Y);
  TerminalIngredients term = terminal_synthesize(m, ctrl.K, Lambda_x, Lambda_u,
                                                 tight, obs, ctrl, sp, opts, &tr);
  return TubePipelineResult{std::move(obs), std::move(ctrl), std::move(term),
                            std::move(tight), std::move(tr)};
}

// Everything a run needs in one place; what the design file stores.
struct DesignBundle {
  ObserverDesign observer;
  ControllerDesign controller;
  std::optional<TerminalIngredients> terminal;
  std::optional<TightenedSets> tight;
  std::optional<geom::Polytope> U, Y;  // operating constraints, when given
  MatrixXd Lambda_x, Lambda_u;
  Transcript transcript;

  bool nmpc_ready() const {
    return terminal.has_value() && tight.has_value() && U && Y;
  }
};

// Reinterpret a static design as the tube ancillary law (shared gain); valid
// because the setpoint-shrunk locality conditions imply the tube ones, which
// is re-checked here rather than assumed.
inline ControllerDesign tube_from_static(const RnnModel& m, const ObserverDesign& obs,
                                         const ControllerDesign& st,
                                         double tol_psd = 1e-7) {
  ControllerDesign tube = st;
  tube.mode = ControllerDesign::Mode::Tube;
  tube.setpoint.reset();
  const auto rep = certify_controller(m, obs, tube);
  require(rep.ok(tol_psd), "tube_reuse",
          "static design does not certify the tube conditions (worst block " +
              rep.worst().first + ")");
  return tube;
}

}  // namespace deltiss::synth
