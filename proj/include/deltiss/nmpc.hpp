#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deltiss/geometry.hpp"
#include "deltiss/model.hpp"
#include "deltiss/qp.hpp"
#include "deltiss/synthesis.hpp"

namespace deltiss::nmpc {

using model::RnnModel;

// Everything the finite-horizon problem needs: horizon, stage weights,
// certified terminal ingredients, tightened constraint sets, the target
// equilibrium, the tube cross-section anchoring the nominal head state, and
// the ancillary gain realizing the tube law.
struct FhocpSpec {
  int N = 10;
  MatrixXd Lambda_x, Lambda_u;
  synth::TerminalIngredients terminal;
  synth::TightenedSets tight;
  model::Setpoint setpoint;
  geom::Ellipsoid init_ellipsoid;  // E(P_c / gamma_c), centered at zero
  MatrixXd K;

  void validate(const RnnModel& m) const {
    require(N >= 1, "fhocp_spec", "horizon must be at least 1");
    require(Lambda_x.rows() == m.n() && Lambda_u.rows() == m.m(), "fhocp_spec",
            "stage weight dimensions must match the model");
    require(min_eig_sym(Lambda_x) > 0.0 && min_eig_sym(Lambda_u) > 0.0,
            "fhocp_spec", "stage weights must be positive definite");
    require(init_ellipsoid.dim() == m.n(), "fhocp_spec",
            "initial ellipsoid dimension mismatch");
    require(K.rows() == m.m() && K.cols() == m.n(), "fhocp_spec",
            "ancillary gain dimension mismatch");
  }
};

struct FhocpSolution {
  std::vector<VectorXd> x_seq;  // N+1 nominal states
  std::vector<VectorXd> u_seq;  // N nominal inputs
  double cost = kInf;
  enum class Status { Optimal, Infeasible, MaxIter } status = Status::Infeasible;
  double kkt_residual = kInf;
  double max_violation = kInf;
};

inline const char* to_string(FhocpSolution::Status s) {
  switch (s) {
    case FhocpSolution::Status::Optimal: return "optimal";
    case FhocpSolution::Status::Infeasible: return "infeasible";
    case FhocpSolution::Status::MaxIter: return "max_iter";
  }
  return "?";
}

struct ConstraintReport {
  double eq_defect = 0.0;    // worst dynamics defect
  double violation = -kInf;  // worst inequality residual (negative = slack)
  bool ok(double tol) const { return eq_defect <= tol && violation <= tol; }
};

// The finite-horizon optimal control problem at one sampling instant:
// nominal trajectory decision variables, tightened polytopes and locality
// boxes along the horizon, tube-membership of the head state and terminal
// ellipsoid membership at the tail. Solved by Gauss-Newton SQP on the smooth
// multiple-shooting NLP; the ellipsoidal constraints stay quadratic and are
// linearized per iteration.
class Fhocp {
 public:
  Fhocp(const RnnModel& m, const FhocpSpec& spec, VectorXd x_hat)
      : m_(&m), spec_(&spec), x_hat_(std::move(x_hat)) {
    spec.validate(m);
    require(all_finite(x_hat_), "non_finite", "fhocp: non-finite state estimate");
    n_ = m.n();
    nm_ = m.m();
    nz_ = (spec.N + 1) * n_ + spec.N * nm_;
    for (int i = 0; i < m.nu(); ++i) {
      if (spec.tight.V_c.bounded(i)) vc_rows_.push_back(i);
      if (spec.tight.V_o.bounded(i)) vo_rows_.push_back(i);
    }
    ni_per_stage_ = static_cast<int>(spec.tight.U_tilde.rows()) +
                    static_cast<int>(spec.tight.Y_tilde.rows()) +
                    2 * static_cast<int>(vc_rows_.size() + vo_rows_.size());
    ni_ = spec.N * ni_per_stage_ + 2;  // + head and terminal ellipsoids
  }

  int n_vars() const { return nz_; }
  const VectorXd& x_hat() const { return x_hat_; }

  VectorXd pack(const std::vector<VectorXd>& x_seq,
                const std::vector<VectorXd>& u_seq) const {
    VectorXd z(nz_);
    for (int t = 0; t <= spec_->N; ++t) z.segment(t * n_, n_) = x_seq[t];
    for (int t = 0; t < spec_->N; ++t) {
      z.segment((spec_->N + 1) * n_ + t * nm_, nm_) = u_seq[t];
    }
    return z;
  }

  void unpack(const VectorXd& z, std::vector<VectorXd>& x_seq,
              std::vector<VectorXd>& u_seq) const {
    x_seq.assign(spec_->N + 1, VectorXd());
    u_seq.assign(spec_->N, VectorXd());
    for (int t = 0; t <= spec_->N; ++t) x_seq[t] = z.segment(t * n_, n_);
    for (int t = 0; t < spec_->N; ++t) {
      u_seq[t] = z.segment((spec_->N + 1) * n_ + t * nm_, nm_);
    }
  }

  double objective(const VectorXd& z) const {
    const int N = spec_->N;
    double J = 0.0;
    for (int t = 0; t < N; ++t) {
      const VectorXd dx = z.segment(t * n_, n_) - spec_->setpoint.x_bar;
      const VectorXd du =
          z.segment((N + 1) * n_ + t * nm_, nm_) - spec_->setpoint.u_bar;
      J += dx.dot(spec_->Lambda_x * dx) + du.dot(spec_->Lambda_u * du);
    }
    const VectorXd dxN = z.segment(N * n_, n_) - spec_->setpoint.x_bar;
    J += dxN.dot(spec_->terminal.P_f * dxN);
    return J;
  }

  VectorXd gradient(const VectorXd& z) const {
    const int N = spec_->N;
    VectorXd g = VectorXd::Zero(nz_);
    for (int t = 0; t < N; ++t) {
      const VectorXd dx = z.segment(t * n_, n_) - spec_->setpoint.x_bar;
      const VectorXd du =
          z.segment((N + 1) * n_ + t * nm_, nm_) - spec_->setpoint.u_bar;
      g.segment(t * n_, n_) = 2.0 * spec_->Lambda_x * dx;
      g.segment((N + 1) * n_ + t * nm_, nm_) = 2.0 * spec_->Lambda_u * du;
    }
    const VectorXd dxN = z.segment(N * n_, n_) - spec_->setpoint.x_bar;
    g.segment(N * n_, n_) = 2.0 * spec_->terminal.P_f * dxN;
    return g;
  }

  MatrixXd hessian() const {
    const int N = spec_->N;
    MatrixXd H = MatrixXd::Zero(nz_, nz_);
    for (int t = 0; t < N; ++t) {
      H.block(t * n_, t * n_, n_, n_) = 2.0 * spec_->Lambda_x;
      H.block((N + 1) * n_ + t * nm_, (N + 1) * n_ + t * nm_, nm_, nm_) =
          2.0 * spec_->Lambda_u;
    }
    H.block(N * n_, N * n_, n_, n_) = 2.0 * spec_->terminal.P_f;
    return H;
  }

  // dynamics defects and their Jacobian
  void equalities(const VectorXd& z, VectorXd& c, MatrixXd& Jc) const {
    const int N = spec_->N;
    c.resize(N * n_);
    Jc = MatrixXd::Zero(N * n_, nz_);
    for (int t = 0; t < N; ++t) {
      const VectorXd x = z.segment(t * n_, n_);
      const VectorXd u = z.segment((N + 1) * n_ + t * nm_, nm_);
      const VectorXd xn = z.segment((t + 1) * n_, n_);
      const VectorXd v = m_->A_tilde() * x + m_->B_tilde() * u;
      c.segment(t * n_, n_) =
          xn - (m_->A() * x + m_->B() * u + m_->B_q() * m_->q(v));
      const VectorXd dq = m_->dq_diag(v);
      const MatrixXd fx = m_->A() + m_->B_q() * dq.asDiagonal() * m_->A_tilde();
      const MatrixXd fu = m_->B() + m_->B_q() * dq.asDiagonal() * m_->B_tilde();
      Jc.block(t * n_, t * n_, n_, n_) = -fx;
      Jc.block(t * n_, (N + 1) * n_ + t * nm_, n_, nm_) = -fu;
      Jc.block(t * n_, (t + 1) * n_, n_, n_) = MatrixXd::Identity(n_, n_);
    }
  }

  // inequality residuals c <= 0 and their Jacobian
  void inequalities(const VectorXd& z, VectorXd& c, MatrixXd& Jc) const {
    const int N = spec_->N;
    const auto& U = spec_->tight.U_tilde;
    const auto& Y = spec_->tight.Y_tilde;
    c.resize(ni_);
    Jc = MatrixXd::Zero(ni_, nz_);
    int r = 0;
    for (int t = 0; t < N; ++t) {
      const int xo = t * n_, uo = (N + 1) * n_ + t * nm_;
      const VectorXd x = z.segment(xo, n_);
      const VectorXd u = z.segment(uo, nm_);
      for (int s = 0; s < U.rows(); ++s, ++r) {
        c[r] = (U.G.row(s) * u).value() - U.b[s];
        Jc.block(r, uo, 1, nm_) = U.G.row(s);
      }
      for (int s = 0; s < Y.rows(); ++s, ++r) {
        c[r] = (Y.G.row(s) * m_->C() * x).value() - Y.b[s];
        Jc.block(r, xo, 1, n_) = Y.G.row(s) * m_->C();
      }
      const VectorXd v = m_->A_tilde() * x + m_->B_tilde() * u;
      auto box_rows = [&](const std::vector<int>& idx, const geom::Box& box) {
        for (int i : idx) {
          c[r] = v[i] - box.half_widths[i];
          Jc.block(r, xo, 1, n_) = m_->A_tilde().row(i);
          Jc.block(r, uo, 1, nm_) = m_->B_tilde().row(i);
          ++r;
          c[r] = -v[i] - box.half_widths[i];
          Jc.block(r, xo, 1, n_) = -m_->A_tilde().row(i);
          Jc.block(r, uo, 1, nm_) = -m_->B_tilde().row(i);
          ++r;
        }
      };
      box_rows(vc_rows_, spec_->tight.V_c);
      box_rows(vo_rows_, spec_->tight.V_o);
    }
    {  // head state inside the tube cross-section around x_hat
      const VectorXd d = x_hat_ - z.segment(0, n_);
      const MatrixXd& Q = spec_->init_ellipsoid.shape();
      c[r] = d.dot(Q * d) - 1.0;
      Jc.block(r, 0, 1, n_) = (-2.0 * Q * d).transpose();
      ++r;
    }
    {  // terminal membership
      const VectorXd d = z.segment(N * n_, n_) - spec_->terminal.setpoint.x_bar;
      const MatrixXd Q = spec_->terminal.P_f / spec_->terminal.gamma_f;
      c[r] = d.dot(Q * d) - 1.0;
      Jc.block(r, N * n_, 1, n_) = (2.0 * Q * d).transpose();
      ++r;
    }
  }

  ConstraintReport report(const VectorXd& z) const {
    VectorXd ce, ci;
    MatrixXd Je, Ji;
    equalities(z, ce, Je);
    inequalities(z, ci, Ji);
    return ConstraintReport{ce.size() ? ce.cwiseAbs().maxCoeff() : 0.0,
                            ci.size() ? ci.maxCoeff() : -kInf};
  }

  // Forward rollout from a head state under the ancillary equilibrium law;
  // satisfies the dynamics exactly.
  VectorXd rollout(const VectorXd& x0) const {
    std::vector<VectorXd> xs(spec_->N + 1), us(spec_->N);
    xs[0] = x0;
    for (int t = 0; t < spec_->N; ++t) {
      us[t] = spec_->setpoint.u_bar + spec_->K * (xs[t] - spec_->setpoint.x_bar);
      xs[t + 1] = m_->nominal_step(xs[t], us[t]).first;
    }
    return pack(xs, us);
  }

  FhocpSolution solve(const VectorXd* warm = nullptr, int max_sqp = 60,
                      double feas_tol = 1e-6, double kkt_tol = 1e-6) const {
    VectorXd z = warm ? *warm : rollout(x_hat_);
    const MatrixXd H0 = hessian();
    const int N = spec_->N;
    const MatrixXd Q_head = spec_->init_ellipsoid.shape();
    const MatrixXd Q_term = spec_->terminal.P_f / spec_->terminal.gamma_f;

    FhocpSolution best;
    auto consider = [&](const VectorXd& cand, double kkt) {
      const auto rep = report(cand);
      const double viol = std::max(rep.eq_defect, rep.violation);
      if (viol <= feas_tol) {
        const double J = objective(cand);
        if (J < best.cost) {
          best.cost = J;
          unpack(cand, best.x_seq, best.u_seq);
          best.status = FhocpSolution::Status::MaxIter;
          best.kkt_residual = kkt;
          best.max_violation = viol;
        }
      }
    };
    consider(z, kInf);

    // Multiplier estimates of the two quadratic membership rows feed their
    // (exact, constant) curvature into the QP model; the trust region guards
    // the first steps, where a linearization at the ellipsoid center carries
    // no information.
    double lam_head = 1.0, lam_term = 1.0;
    double tr_radius = 1.0;
    double rho = 1.0;
    for (int it = 0; it < max_sqp; ++it) {
      VectorXd ce, ci;
      MatrixXd Je, Ji;
      equalities(z, ce, Je);
      inequalities(z, ci, Ji);
      const VectorXd g = gradient(z);

      MatrixXd H = H0;
      H.block(0, 0, n_, n_) += 2.0 * lam_head * Q_head;
      H.block(N * n_, N * n_, n_, n_) += 2.0 * lam_term * Q_term;

      // QP rows: real constraints then the trust-region box
      MatrixXd Ji_tr(ni_ + 2 * nz_, nz_);
      VectorXd rhs_tr(ni_ + 2 * nz_);
      Ji_tr.topRows(ni_) = Ji;
      rhs_tr.head(ni_) = -ci;
      Ji_tr.middleRows(ni_, nz_) = MatrixXd::Identity(nz_, nz_);
      Ji_tr.bottomRows(nz_) = -MatrixXd::Identity(nz_, nz_);
      rhs_tr.segment(ni_, 2 * nz_).setConstant(tr_radius);

      const auto qp = qp::solve_qp(H, g, Je, -ce, Ji_tr, rhs_tr, nullptr);
      if (qp.status == qp::QpResult::Status::Failed) break;
      const VectorXd& dz = qp.z;
      lam_head = std::max(qp.in_mult[ni_ - 2], 0.0);
      lam_term = std::max(qp.in_mult[ni_ - 1], 0.0);

      // KKT stationarity at z with the real-row multipliers only
      VectorXd stat = g;
      if (qp.eq_mult.size()) stat += Je.transpose() * qp.eq_mult;
      stat += Ji.transpose() * qp.in_mult.head(ni_);
      const double tr_active = qp.in_mult.tail(2 * nz_).cwiseAbs().maxCoeff();
      const double scale = 1.0 + g.cwiseAbs().maxCoeff();
      const double kkt = stat.cwiseAbs().maxCoeff() / scale;
      const double viol =
          std::max(ce.size() ? ce.cwiseAbs().maxCoeff() : 0.0,
                   ci.size() ? std::max(0.0, ci.maxCoeff()) : 0.0);
      if (kkt <= kkt_tol && viol <= feas_tol && tr_active <= kkt_tol) {
        FhocpSolution out;
        unpack(z, out.x_seq, out.u_seq);
        out.cost = objective(z);
        out.status = FhocpSolution::Status::Optimal;
        out.kkt_residual = kkt;
        out.max_violation = viol;
        return out;
      }
      if (dz.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + z.cwiseAbs().maxCoeff())) break;

      // l1 merit line search
      const double mult_norm =
          std::max(qp.eq_mult.size() ? qp.eq_mult.cwiseAbs().maxCoeff() : 0.0,
                   qp.in_mult.head(ni_).cwiseAbs().maxCoeff());
      rho = std::max(rho, 2.0 * mult_norm + 1.0);
      auto merit = [&](const VectorXd& zz) {
        VectorXd ce2, ci2;
        MatrixXd Je2, Ji2;
        equalities(zz, ce2, Je2);
        inequalities(zz, ci2, Ji2);
        return objective(zz) + rho * (ce2.lpNorm<1>() + ci2.cwiseMax(0.0).sum());
      };
      const double phi0 = merit(z);
      const double pred =
          g.dot(dz) - rho * (ce.lpNorm<1>() + ci.cwiseMax(0.0).sum());
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        const VectorXd cand = z + alpha * dz;
        if (merit(cand) <= phi0 + 1e-4 * alpha * std::min(pred, 0.0)) {
          z = cand;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        tr_radius *= 0.25;
        if (tr_radius < 1e-10) break;
        continue;
      }
      tr_radius = alpha >= 1.0 ? std::min(2.0 * tr_radius, 1e3)
                               : std::max(0.5 * tr_radius, 1e-6);
      consider(z, kkt);
    }

    if (best.cost < kInf) return best;  // feasible but not certified optimal

    // Elastic probe: minimize the uniform inequality relaxation with the
    // dynamics kept hard; only a confirmed positive relaxation is reported
    // as infeasibility.
    const double t_star = elastic_relaxation(z, feas_tol);
    FhocpSolution out;
    unpack(z, out.x_seq, out.u_seq);
    out.status = FhocpSolution::Status::Infeasible;
    out.max_violation = t_star;
    return out;
  }

  // min t s.t. dynamics(z) = 0, c_in(z) <= t, from the given start.
  double elastic_relaxation(VectorXd z, double feas_tol, int max_sqp = 60) const {
    const int nz = nz_;
    MatrixXd H = MatrixXd::Zero(nz + 1, nz + 1);
    H(nz, nz) = 1e-6;  // keep the QP strictly convex
    VectorXd g = VectorXd::Zero(nz + 1);
    g[nz] = 1.0;

    // start from an exact rollout so the equalities hold
    std::vector<VectorXd> xs, us;
    unpack(z, xs, us);
    z = rollout(xs[0]);
    double t = 0.0;
    {
      VectorXd ci;
      MatrixXd Ji;
      inequalities(z, ci, Ji);
      t = ci.maxCoeff() + 1.0;
    }
    for (int it = 0; it < max_sqp; ++it) {
      VectorXd ce, ci;
      MatrixXd Je, Ji;
      equalities(z, ce, Je);
      inequalities(z, ci, Ji);
      MatrixXd Je2 = MatrixXd::Zero(Je.rows(), nz + 1);
      Je2.leftCols(nz) = Je;
      MatrixXd Ji2 = MatrixXd::Zero(Ji.rows(), nz + 1);
      Ji2.leftCols(nz) = Ji;
      Ji2.col(nz).setConstant(-1.0);
      const VectorXd resid = ci.array() - t;

      const auto qp = qp::solve_qp(H, g, Je2, -ce, Ji2, -resid);
      if (qp.status == qp::QpResult::Status::Failed) break;
      double alpha = 1.0;
      // plain backtracking on the elastic merit
      auto merit = [&](const VectorXd& zz, double tt) {
        VectorXd ce2, ci2;
        MatrixXd J2;
        equalities(zz, ce2, J2);
        inequalities(zz, ci2, J2);
        return tt + 10.0 * (ce2.lpNorm<1>() +
                            (ci2.array() - tt).max(0.0).sum());
      };
      const double phi0 = merit(z, t);
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        const VectorXd znew = z + alpha * qp.z.head(nz);
        const double tnew = t + alpha * qp.z[nz];
        if (merit(znew, tnew) < phi0 - 1e-12) {
          z = znew;
          t = tnew;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted || qp.z.cwiseAbs().maxCoeff() < 1e-10) break;
      if (t < -10.0 * feas_tol) break;  // comfortably feasible already
    }
    VectorXd ci;
    MatrixXd Ji;
    inequalities(z, ci, Ji);
    return ci.maxCoeff();
  }

 private:
  const RnnModel* m_;
  const FhocpSpec* spec_;
  VectorXd x_hat_;
  int n_ = 0, nm_ = 0, nz_ = 0, ni_ = 0, ni_per_stage_ = 0;
  std::vector<int> vc_rows_, vo_rows_;
};

// Shift a solution one step and append the auxiliary law, the feasible
// candidate of the recursive-feasibility argument. Also the warm start.
inline std::pair<std::vector<VectorXd>, std::vector<VectorXd>> shifted_candidate(
    const RnnModel& m, const FhocpSpec& spec, const FhocpSolution& prev) {
  std::vector<VectorXd> xs(prev.x_seq.begin() + 1, prev.x_seq.end());
  std::vector<VectorXd> us(prev.u_seq.begin() + 1, prev.u_seq.end());
  const VectorXd& x_tail = xs.back();
  const VectorXd u_aux =
      spec.setpoint.u_bar + spec.K * (x_tail - spec.setpoint.x_bar);
  us.push_back(u_aux);
  xs.push_back(m.nominal_step(x_tail, u_aux).first);
  return {std::move(xs), std::move(us)};
}

// Receding-horizon tube controller: owns the previous optimal sequences and
// realizes u = u_tilde(k) + K (x_hat - x_tilde(k)).
class TubeMpc {
 public:
  struct StepInfo {
    VectorXd u;
    FhocpSolution sol;
    bool candidate_checked = false;
    bool candidate_feasible = false;
    bool segment_start = false;  // cold start (k = 0 of a reference segment)
  };

  TubeMpc(const RnnModel& m, FhocpSpec spec) : m_(&m), spec_(std::move(spec)) {
    spec_.validate(m);
  }

  const FhocpSpec& spec() const { return spec_; }

  // Install a new target (setpoint change): the next step is a fresh k = 0.
  void retarget(FhocpSpec spec) {
    spec_ = std::move(spec);
    spec_.validate(*m_);
    prev_.reset();
  }

  StepInfo step(const VectorXd& x_hat) {
    Fhocp problem(*m_, spec_, x_hat);
    StepInfo info;
    std::optional<VectorXd> warm;
    if (prev_) {
      auto [xs, us] = shifted_candidate(*m_, spec_, *prev_);
      const VectorXd zc = problem.pack(xs, us);
      const auto rep = problem.report(zc);
      info.candidate_checked = true;
      info.candidate_feasible = rep.ok(1e-6);
      warm = zc;
    } else {
      info.segment_start = true;
    }

    info.sol = problem.solve(warm ? &*warm : nullptr);
    if (info.sol.status == FhocpSolution::Status::Infeasible) {
      if (info.candidate_feasible) {
        // the warm start was a feasible point: the solver cannot honestly
        // report infeasibility
        throw std::logic_error("fhocp solver rejected a feasible candidate");
      }
      throw Error(prev_ ? "fhocp_infeasible" : "fhocp_infeasible_k0",
                  prev_ ? "receding-horizon problem lost feasibility"
                        : "no feasible plan from the initial state estimate");
    }
    prev_ = info.sol;
    info.u = info.sol.u_seq[0] + spec_.K * (x_hat - info.sol.x_seq[0]);
    return info;
  }

  void reset() { prev_.reset(); }

 private:
  const RnnModel* m_;
  FhocpSpec spec_;
  std::optional<FhocpSolution> prev_;
};

}  // namespace deltiss::nmpc
