#pragma once

#include "deltiss/model.hpp"
#include "deltiss/nmpc.hpp"
#include "deltiss/synthesis.hpp"

namespace fixtures {

// Two-state, single-channel tanh model used across the test suite. Mildly
// nonlinear, open-loop stable, detectable and stabilizable.
inline deltiss::model::RnnModel desk_model() {
  using deltiss::MatrixXd;
  MatrixXd A_x(2, 2), B_u(2, 1), D_w(2, 1), B_sigma(2, 1);
  MatrixXd A_tilde(1, 2), B_tilde(1, 1), D_tilde(1, 1), C(1, 2);
  A_x << 0.5, 0.1, 0.0, 0.4;
  B_u << 1.0, 0.5;
  B_sigma << 0.2, 0.1;
  A_tilde << 0.5, 0.5;
  B_tilde << 0.1;
  D_w << 0.05, 0.05;
  D_tilde << 0.01;
  C << 1.0, 0.0;
  return deltiss::model::RnnModel(A_x, B_u, D_w, B_sigma, A_tilde, B_tilde,
                                  D_tilde, C,
                                  {deltiss::model::SigmoidSpec::tanh_spec()});
}

// |w| <= 0.05 and |eta| <= 0.01 as shape matrices.
inline deltiss::MatrixXd desk_Qw0() {
  return deltiss::MatrixXd::Constant(1, 1, 400.0);
}
inline deltiss::MatrixXd desk_Qeta0() {
  return deltiss::MatrixXd::Constant(1, 1, 1.0e4);
}

inline deltiss::geom::Polytope interval_polytope(double bound, int dim = 1) {
  deltiss::MatrixXd G(2 * dim, dim);
  deltiss::VectorXd b(2 * dim);
  G.setZero();
  for (int i = 0; i < dim; ++i) {
    G(2 * i, i) = 1.0;
    G(2 * i + 1, i) = -1.0;
    b[2 * i] = b[2 * i + 1] = bound;
  }
  return deltiss::geom::Polytope(G, b);
}

// Fully designed tube bundle on the desk model (|u| <= 2, |y| <= 0.8),
// synthesized once and shared across test cases.
struct DeskBundle {
  deltiss::model::RnnModel m;
  deltiss::model::Setpoint sp;
  deltiss::synth::ObserverDesign obs;
  deltiss::synth::ControllerDesign ctrl;
  deltiss::synth::TerminalIngredients term;
  deltiss::synth::TightenedSets tight;
  deltiss::geom::Polytope U, Y;
  deltiss::MatrixXd Lambda_x, Lambda_u;

  deltiss::nmpc::FhocpSpec fhocp_spec(int N) const {
    return deltiss::nmpc::FhocpSpec{N,    Lambda_x, Lambda_u,
                                    term, tight,    sp,
                                    ctrl.rpi(),     ctrl.K};
  }
};

inline const DeskBundle& desk_tube_bundle() {
  static const DeskBundle bundle = [] {
    using namespace deltiss;
    auto m = desk_model();
    auto sp = model::equilibrium(m, VectorXd::Zero(1));
    auto U = interval_polytope(2.0);
    auto Y = interval_polytope(0.8);
    const MatrixXd Lx = MatrixXd::Identity(2, 2), Lu = MatrixXd::Identity(1, 1);
    auto res = synth::design_tube_pipeline(m, sp, desk_Qw0(), desk_Qeta0(), U, Y,
                                           Lx, Lu);
    return DeskBundle{std::move(m),
                      std::move(sp),
                      std::move(res.observer),
                      std::move(res.controller),
                      std::move(res.terminal),
                      std::move(res.tight),
                      std::move(U),
                      std::move(Y),
                      Lx,
                      Lu};
  }();
  return bundle;
}

}  // namespace fixtures
