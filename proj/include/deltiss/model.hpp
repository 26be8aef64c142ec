#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "deltiss/common.hpp"

namespace deltiss::model {

// Scalar sigmoid activation with derivative oracles. Built-in family: tanh.
// User-supplied activations are spot-checked on a grid at load time (zero at
// zero, unit slope at zero, bounded by one, positive and even slope that is
// non-increasing in |v|); those properties cannot be certified from finitely
// many samples, only falsified.
struct SigmoidSpec {
  std::string kind;
  std::function<double(double)> eval;
  std::function<double(double)> deriv;
  std::function<double(double)> deriv2;

  static SigmoidSpec tanh_spec() {
    SigmoidSpec s;
    s.kind = "tanh";
    s.eval = [](double v) { return std::tanh(v); };
    s.deriv = [](double v) { const double t = std::tanh(v); return 1.0 - t * t; };
    s.deriv2 = [](double v) {
      const double t = std::tanh(v);
      return -2.0 * t * (1.0 - t * t);
    };
    return s;
  }

  // q(v) = v - sigma(v) and its slope 1 - sigma'(v).
  double q(double v) const { return v - eval(v); }
  double dq(double v) const { return 1.0 - deriv(v); }

  void spot_check(double span = 8.0, int grid = 257) const {
    require(std::abs(eval(0.0)) <= 1e-12, "activation",
            kind + ": sigma(0) must be 0");
    require(std::abs(deriv(0.0) - 1.0) <= 1e-9, "activation",
            kind + ": sigma'(0) must be 1");
    double prev_abs_slope = kInf;
    for (int i = 0; i <= grid; ++i) {
      const double v = -span + 2.0 * span * i / grid;
      require(std::abs(eval(v)) <= 1.0 + 1e-12, "activation",
              kind + ": |sigma(v)| must stay within 1");
      const double d = deriv(v);
      require(d > 0.0, "activation", kind + ": sigma'(v) must be positive");
      require(d <= 1.0 + 1e-12, "activation",
              kind + ": sigma'(v) must not exceed 1");
      require(std::abs(d - deriv(-v)) <= 1e-9, "activation",
              kind + ": sigma' must be even");
      if (v >= 0.0) {
        require(d <= prev_abs_slope + 1e-9, "activation",
                kind + ": sigma' must be non-increasing in |v|");
        prev_abs_slope = d;
      }
    }
  }
};

// Largest half-width v_bar such that 1 - sigma'(v) <= 1/h for all |v| <= v_bar.
// h = 1 yields +inf (the sector condition is global); h > 1 reduces, by the
// single-inflection structure of sigma, to the root of sigma'(v) = 1 - 1/h on
// v >= 0, found by bisection to |interval| <= 1e-12.
inline double sector_bound(const SigmoidSpec& act, double h) {
  require(h >= 1.0, "sector_bound", "sector slope parameter h must be >= 1");
  if (h == 1.0) return kInf;
  const double target = 1.0 - 1.0 / h;  // sigma'(v_bar) = 1 - 1/h
  double lo = 0.0, hi = 1.0;
  while (act.deriv(hi) > target) {
    lo = hi;
    hi *= 2.0;
    if (hi > 400.0) return kInf;  // slope never drops to target in double range
  }
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    (act.deriv(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Diagonal sector parameters H = diag(h_i), h_i >= 1, with the per-channel
// validity half-widths v_bar_i(h_i) and the active index set {i : h_i > 1}.
struct SectorParams {
  VectorXd h;       // diagonal of H
  VectorXd v_bars;  // +inf exactly where h_i == 1
  std::vector<int> active;

  SectorParams() = default;

  SectorParams(const VectorXd& h_diag, const std::vector<SigmoidSpec>& acts)
      : h(h_diag), v_bars(h_diag.size()) {
    require(h.size() == static_cast<Eigen::Index>(acts.size()), "dimension",
            "sector params: one h per activation channel");
    for (int i = 0; i < h.size(); ++i) {
      require(h[i] >= 1.0, "sector_bound", "h_i must be >= 1");
      v_bars[i] = sector_bound(acts[i], h[i]);
      if (h[i] > 1.0) active.push_back(i);
    }
  }

  int nu() const { return static_cast<int>(h.size()); }
  bool global() const { return active.empty(); }
  MatrixXd H() const { return h.asDiagonal(); }
};

// Discrete-time RNN plant
//   x+ = A_x x + B_u u + D_w w + B_sigma sigma(v),  v = At x + Bt u + Dt w,
//   y  = C x + eta,
// with the equivalent q-form
//   x+ = A x + B u + D w + B_q q(v),  q(v) = v - sigma(v),
// where A = A_x + B_sigma At, B = B_u + B_sigma Bt, D = D_w + B_sigma Dt and
// B_q = -B_sigma. Both forms are kept; stepping them from the same point must
// agree to 1e-12, which load-time validation checks.
class RnnModel {
 public:
  RnnModel(MatrixXd A_x, MatrixXd B_u, MatrixXd D_w, MatrixXd B_sigma,
           MatrixXd A_tilde, MatrixXd B_tilde, MatrixXd D_tilde, MatrixXd C,
           std::vector<SigmoidSpec> activations)
      : A_x_(std::move(A_x)),
        B_u_(std::move(B_u)),
        D_w_(std::move(D_w)),
        B_sigma_(std::move(B_sigma)),
        A_tilde_(std::move(A_tilde)),
        B_tilde_(std::move(B_tilde)),
        D_tilde_(std::move(D_tilde)),
        C_(std::move(C)),
        acts_(std::move(activations)) {
    const int n = this->n(), m = this->m(), d = this->d(), nu = this->nu(),
              p = this->p();
    require(A_x_.rows() == n && A_x_.cols() == n, "model_shape", "A_x must be n x n");
    require(B_u_.rows() == n && B_u_.cols() == m, "model_shape", "B_u must be n x m");
    require(D_w_.rows() == n && D_w_.cols() == d, "model_shape", "D_w must be n x d");
    require(B_sigma_.rows() == n && B_sigma_.cols() == nu, "model_shape",
            "B_sigma must be n x nu");
    require(A_tilde_.rows() == nu && A_tilde_.cols() == n, "model_shape",
            "A_tilde must be nu x n");
    require(B_tilde_.rows() == nu && B_tilde_.cols() == m, "model_shape",
            "B_tilde must be nu x m");
    require(D_tilde_.rows() == nu && D_tilde_.cols() == d, "model_shape",
            "D_tilde must be nu x d");
    require(C_.rows() == p && C_.cols() == n, "model_shape", "C must be p x n");
    require(static_cast<int>(acts_.size()) == nu, "model_shape",
            "one activation per channel");
    for (const MatrixXd* mat :
         {&A_x_, &B_u_, &D_w_, &B_sigma_, &A_tilde_, &B_tilde_, &D_tilde_, &C_}) {
      require(all_finite(*mat), "model_shape", "model matrices must be finite");
    }
    A_ = A_x_ + B_sigma_ * A_tilde_;
    B_ = B_u_ + B_sigma_ * B_tilde_;
    D_ = D_w_ + B_sigma_ * D_tilde_;
    B_q_ = -B_sigma_;
  }

  int n() const { return static_cast<int>(A_x_.rows()); }
  int m() const { return static_cast<int>(B_u_.cols()); }
  int d() const { return static_cast<int>(D_w_.cols()); }
  int nu() const { return static_cast<int>(B_sigma_.cols()); }
  int p() const { return static_cast<int>(C_.rows()); }

  const MatrixXd& A_x() const { return A_x_; }
  const MatrixXd& B_u() const { return B_u_; }
  const MatrixXd& D_w() const { return D_w_; }
  const MatrixXd& B_sigma() const { return B_sigma_; }
  const MatrixXd& A_tilde() const { return A_tilde_; }
  const MatrixXd& B_tilde() const { return B_tilde_; }
  const MatrixXd& D_tilde() const { return D_tilde_; }
  const MatrixXd& C() const { return C_; }
  const MatrixXd& A() const { return A_; }
  const MatrixXd& B() const { return B_; }
  const MatrixXd& D() const { return D_; }
  const MatrixXd& B_q() const { return B_q_; }
  const std::vector<SigmoidSpec>& activations() const { return acts_; }

  VectorXd sigma(const VectorXd& v) const {
    VectorXd out(v.size());
    for (int i = 0; i < v.size(); ++i) out[i] = acts_[i].eval(v[i]);
    return out;
  }

  VectorXd q(const VectorXd& v) const { return v - sigma(v); }

  // Diagonal of dq/dv = I - diag(sigma'(v_i)).
  VectorXd dq_diag(const VectorXd& v) const {
    VectorXd out(v.size());
    for (int i = 0; i < v.size(); ++i) out[i] = acts_[i].dq(v[i]);
    return out;
  }

  // Original-form step (sigma form).
  VectorXd step_sigma_form(const VectorXd& x, const VectorXd& u,
                           const VectorXd& w) const {
    const VectorXd v = A_tilde_ * x + B_tilde_ * u + D_tilde_ * w;
    return A_x_ * x + B_u_ * u + D_w_ * w + B_sigma_ * sigma(v);
  }

  // q-form step; also returns v for locality monitoring.
  std::pair<VectorXd, VectorXd> plant_step(const VectorXd& x, const VectorXd& u,
                                           const VectorXd& w) const {
    require(all_finite(x) && all_finite(u) && all_finite(w), "non_finite",
            "plant_step: non-finite input");
    const VectorXd v = A_tilde_ * x + B_tilde_ * u + D_tilde_ * w;
    const VectorXd x_next = A_ * x + B_ * u + D_ * w + B_q_ * q(v);
    return {x_next, v};
  }

  // Disturbance-free nominal prediction step used by the tube controller.
  std::pair<VectorXd, VectorXd> nominal_step(const VectorXd& x,
                                             const VectorXd& u) const {
    const VectorXd v = A_tilde_ * x + B_tilde_ * u;
    return {A_ * x + B_ * u + B_q_ * q(v), v};
  }

  // Observer step with innovation gains (L, L_tilde); returns (x_hat+, v_hat).
  std::pair<VectorXd, VectorXd> observer_step(const MatrixXd& L,
                                              const MatrixXd& L_tilde,
                                              const VectorXd& x_hat,
                                              const VectorXd& u,
                                              const VectorXd& y) const {
    require(L.rows() == n() && L.cols() == p(), "dimension",
            "observer gain L must be n x p");
    require(L_tilde.rows() == nu() && L_tilde.cols() == p(), "dimension",
            "observer gain L_tilde must be nu x p");
    require(all_finite(x_hat) && all_finite(u) && all_finite(y), "non_finite",
            "observer_step: non-finite input");
    const VectorXd innov = y - C_ * x_hat;
    const VectorXd v_hat = A_tilde_ * x_hat + B_tilde_ * u + L_tilde * innov;
    const VectorXd x_next = A_ * x_hat + B_ * u + L * innov + B_q_ * q(v_hat);
    return {x_next, v_hat};
  }

  VectorXd output(const VectorXd& x, const VectorXd& eta) const {
    return C_ * x + eta;
  }

 private:
  MatrixXd A_x_, B_u_, D_w_, B_sigma_, A_tilde_, B_tilde_, D_tilde_, C_;
  MatrixXd A_, B_, D_, B_q_;
  std::vector<SigmoidSpec> acts_;
};

// Equilibrium triple for a constant output target.
struct Setpoint {
  VectorXd y_bar;
  VectorXd x_bar;
  VectorXd u_bar;

  // v at equilibrium, At x_bar + Bt u_bar (disturbance-free).
  VectorXd v_eq(const RnnModel& m) const {
    return m.A_tilde() * x_bar + m.B_tilde() * u_bar;
  }
};

// Solve x = A_x x + B_u u + B_sigma sigma(At x + Bt u), C x = y_bar by damped
// Newton from the origin. Only square setpoint maps (p == m) are supported.
inline Setpoint equilibrium(const RnnModel& m, const VectorXd& y_bar,
                            int max_iter = 200, double tol = 1e-9) {
  require(m.p() == m.m(), "setpoint_unsupported",
          "equilibrium: setpoint solve requires p == m");
  require(y_bar.size() == m.p(), "dimension", "equilibrium: y_bar must be p-dim");
  const int n = m.n(), mm = m.m();
  VectorXd z = VectorXd::Zero(n + mm);  // [x; u]

  auto residual = [&](const VectorXd& zz) {
    const VectorXd x = zz.head(n), u = zz.tail(mm);
    const VectorXd v = m.A_tilde() * x + m.B_tilde() * u;
    VectorXd r(n + m.p());
    r.head(n) = x - (m.A_x() * x + m.B_u() * u + m.B_sigma() * m.sigma(v));
    r.tail(m.p()) = m.C() * x - y_bar;
    return r;
  };

  double rn = residual(z).norm();
  for (int it = 0; it < max_iter && rn > tol; ++it) {
    const VectorXd x = z.head(n), u = z.tail(mm);
    const VectorXd v = m.A_tilde() * x + m.B_tilde() * u;
    VectorXd sp(v.size());
    for (int i = 0; i < v.size(); ++i) sp[i] = m.activations()[i].deriv(v[i]);
    MatrixXd J(n + m.p(), n + mm);
    J.topLeftCorner(n, n) =
        MatrixXd::Identity(n, n) - m.A_x() - m.B_sigma() * sp.asDiagonal() * m.A_tilde();
    J.topRightCorner(n, mm) = -m.B_u() - m.B_sigma() * sp.asDiagonal() * m.B_tilde();
    J.bottomLeftCorner(m.p(), n) = m.C();
    J.bottomRightCorner(m.p(), mm).setZero();

    const VectorXd r = residual(z);
    const VectorXd step = J.fullPivLu().solve(-r);
    double alpha = 1.0;
    for (int ls = 0; ls < 40; ++ls) {
      const double trial = residual(z + alpha * step).norm();
      if (trial < (1.0 - 1e-4 * alpha) * rn) {
        z += alpha * step;
        rn = trial;
        break;
      }
      alpha *= 0.5;
      if (ls == 39) {
        throw Error("setpoint_infeasible",
                    "equilibrium: Newton stalled; setpoint may be unreachable");
      }
    }
  }
  require(rn <= tol, "setpoint_infeasible",
          "equilibrium: no convergence within iteration budget");
  return Setpoint{y_bar, z.head(n), z.tail(mm)};
}

}  // namespace deltiss::model
