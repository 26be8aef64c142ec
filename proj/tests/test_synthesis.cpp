#include <catch2/catch_amalgamated.hpp>

#include "deltiss/synthesis.hpp"
#include "fixtures.hpp"

using namespace deltiss;
using namespace deltiss::synth;
using Catch::Approx;
using fixtures::desk_model;

namespace {

MatrixXd scalar_mat(double v) { return MatrixXd::Constant(1, 1, v); }

geom::Polytope sym_interval(double bound) {
  MatrixXd G(2, 1);
  G << 1, -1;
  VectorXd b = VectorXd::Constant(2, bound);
  return geom::Polytope(G, b);
}

}  // namespace

TEST_CASE("PBH detectability and stabilizability") {
  CHECK(check_detectability(scalar_mat(0.5), scalar_mat(1.0)));
  CHECK_FALSE(check_detectability(scalar_mat(2.0), scalar_mat(0.0)));
  CHECK(check_stabilizability(scalar_mat(0.5), scalar_mat(0.0)));
  CHECK_FALSE(check_stabilizability(scalar_mat(2.0), scalar_mat(0.0)));

  const auto m = desk_model();
  CHECK(check_detectability(m.A(), m.C()));
  CHECK(check_stabilizability(m.A(), m.B()));

  // unobservable unstable mode, complex eigenvalue path
  MatrixXd A(2, 2), C(1, 2);
  A << 1.1, -0.5, 0.5, 1.1;
  C << 0.0, 0.0;
  CHECK_FALSE(check_detectability(A, C));
}

TEST_CASE("parameters_update walks gamma then grows H") {
  const MatrixXd I1 = MatrixXd::Identity(1, 1);
  {
    auto [H, g] = parameters_update(I1, 1.0, 10.0, 0.5, 1.0);
    CHECK(g == Approx(2.0));
    CHECK(H(0, 0) == Approx(1.0));
  }
  {
    auto [H, g] = parameters_update(I1, 10.0, 10.0, 0.5, 1.0);
    CHECK(g == Approx(1.0));
    CHECK(H(0, 0) == Approx(1.5));
  }
  {
    auto [H, g] = parameters_update(2.0 * I1, 9.5, 10.0, 0.5, 1.0);
    CHECK(g == Approx(10.5));
    CHECK(H(0, 0) == Approx(2.0));
  }
  // pure function: repeated calls agree
  auto a = parameters_update(I1, 3.0, 10.0, 0.5, 1.0);
  auto b = parameters_update(I1, 3.0, 10.0, 0.5, 1.0);
  CHECK(a.second == b.second);
}

TEST_CASE("observer synthesis certifies on the desk model") {
  const auto m = desk_model();
  Transcript tr;
  const auto obs =
      observer_synthesize(m, fixtures::desk_Qw0(), fixtures::desk_Qeta0(), {}, &tr);
  const auto rep = certify_observer(m, obs);
  for (const auto& [name, eig] : rep.block_eigs) {
    INFO(name);
    CHECK(eig >= -1e-7);
  }
  CHECK(obs.gamma_o >= 1.0);
  CHECK(min_eig_sym(obs.P_o) > 0.0);
  CHECK_FALSE(tr.empty());
  CHECK(tr.back().outcome == "feasible");

  // RPI ellipsoid is built from P_o / gamma_o exactly
  const auto rpi = obs.rpi();
  CHECK((rpi.shape() - obs.P_o / obs.gamma_o).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("undetectable models are rejected before any solve") {
  // unstable mode invisible from the output
  MatrixXd A_x(2, 2), B_u(2, 1), D_w(2, 1), B_sigma(2, 1);
  MatrixXd A_tilde(1, 2), B_tilde(1, 1), D_tilde(1, 1), C(1, 2);
  A_x << 1.3, 0.0, 0.0, 0.4;
  B_u << 1.0, 0.5;
  B_sigma << 0.0, 0.0;
  A_tilde << 0.1, 0.1;
  B_tilde << 0.1;
  D_w << 0.05, 0.05;
  D_tilde << 0.0;
  C << 0.0, 0.0;
  model::RnnModel bad(A_x, B_u, D_w, B_sigma, A_tilde, B_tilde, D_tilde, C,
                      {model::SigmoidSpec::tanh_spec()});
  try {
    observer_synthesize(bad, fixtures::desk_Qw0(), fixtures::desk_Qeta0());
    FAIL("expected detectability error");
  } catch (const Error& e) {
    CHECK(e.kind() == "detectability");
  }
}

TEST_CASE("hopeless disturbance bounds exhaust the budget") {
  const auto m = desk_model();
  SynthesisOptions opts;
  opts.budget = 12;
  // |w| <= 100: far beyond what the dissipation inequality can absorb
  try {
    observer_synthesize(m, scalar_mat(1e-4), fixtures::desk_Qeta0(), opts);
    FAIL("expected budget exhaustion");
  } catch (const Error& e) {
    CHECK(e.kind() == "budget_exhausted");
  }
}

TEST_CASE("static controller design certifies on the desk model") {
  const auto m = desk_model();
  const auto obs = observer_synthesize(m, fixtures::desk_Qw0(), fixtures::desk_Qeta0());
  const auto sp = model::equilibrium(m, VectorXd::Zero(1));
  Transcript tr;
  const auto ctrl = controller_synthesize_static(m, obs, sp, {}, &tr);
  REQUIRE(ctrl.mode == ControllerDesign::Mode::Static);
  const auto rep = certify_controller(m, obs, ctrl);
  for (const auto& [name, eig] : rep.block_eigs) {
    INFO(name);
    CHECK(eig >= -1e-7);
  }
  CHECK(min_eig_sym(ctrl.P_c) > 0.0);
  // closed-loop gain actually stabilizes
  const MatrixXd A_K = ctrl.A_K(m);
  CHECK(A_K.eigenvalues().cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("observer-side sector margin rejects distant setpoints up front") {
  const auto m = desk_model();
  auto obs = observer_synthesize(m, fixtures::desk_Qw0(), fixtures::desk_Qeta0());
  // regional observer sector with a narrow validity box
  obs.sector = model::SectorParams(VectorXd::Constant(1, 4.0), m.activations());
  VectorXd yb(1);
  yb << 2.0;  // v_eq well beyond atanh(1/2)
  const auto sp = model::equilibrium(m, yb);
  try {
    controller_synthesize_static(m, obs, sp);
    FAIL("expected setpoint rejection");
  } catch (const Error& e) {
    CHECK(e.kind() == "setpoint_margin_obs");
  }
}

TEST_CASE("tube controller, tightening and terminal ingredients on the desk model") {
  const auto m = desk_model();
  const auto sp = model::equilibrium(m, VectorXd::Zero(1));
  const auto res = design_tube_pipeline(
      m, sp, fixtures::desk_Qw0(), fixtures::desk_Qeta0(), sym_interval(2.0),
      sym_interval(0.8), MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1));

  const auto orep = certify_observer(m, res.observer);
  const auto crep = certify_controller(m, res.observer, res.controller);
  for (const auto* rep : {&orep, &crep}) {
    for (const auto& [name, eig] : rep->block_eigs) {
      INFO(name);
      CHECK(eig >= -1e-7);
    }
  }
  const auto trep =
      certify_terminal(m, res.observer, res.controller, MatrixXd::Identity(2, 2),
                       MatrixXd::Identity(1, 1), res.tight, res.terminal);
  for (const auto& [name, eig] : trep.block_eigs) {
    INFO(name);
    CHECK(eig >= -1e-7);
  }

  // tightened offsets are the originals minus the exact support sums
  const auto E_c = res.controller.rpi();
  const auto E_o = res.observer.rpi();
  for (int r = 0; r < 2; ++r) {
    const Eigen::RowVectorXd g = sym_interval(0.8).G.row(r);
    const double expect = 0.8 - E_o.support(m.C(), g.transpose()) -
                          E_c.support(m.C(), g.transpose());
    CHECK(res.tight.Y_tilde.b[r] == Approx(expect).margin(1e-12));
  }
  // terminal set is centered at the target equilibrium and contains it
  CHECK(res.terminal.terminal_set().contains(sp.x_bar));
  // terminal set sits inside the tightened output constraint
  CHECK(res.terminal.gamma_f > 0.0);
}

TEST_CASE("tube reuse of a static gain re-certifies the tube conditions") {
  const auto m = desk_model();
  const auto obs = observer_synthesize(m, fixtures::desk_Qw0(), fixtures::desk_Qeta0());
  const auto sp = model::equilibrium(m, VectorXd::Zero(1));
  const auto st = controller_synthesize_static(m, obs, sp);
  const auto tube = tube_from_static(m, obs, st);
  CHECK(tube.mode == ControllerDesign::Mode::Tube);
  CHECK((tube.K - st.K).cwiseAbs().maxCoeff() == 0.0);
  CHECK(certify_controller(m, obs, tube).ok(1e-7));
}

TEST_CASE("tube cross-section is no larger than the static one under shared parameters") {
  const auto m = desk_model();
  const auto obs = observer_synthesize(m, fixtures::desk_Qw0(), fixtures::desk_Qeta0());
  const auto sp = model::equilibrium(m, VectorXd::Zero(1));
  const auto st = controller_synthesize_static(m, obs, sp);
  const auto tb = controller_synthesize_tube(m, obs);
  REQUIRE(st.gamma_c == Approx(tb.gamma_c));  // same retry path expected here
  // the tube objective shrinks the worst semi-axis of E(P_c/gamma_c)
  const double ax_static =
      std::sqrt(st.gamma_c / min_eig_sym(st.P_c));
  const double ax_tube = std::sqrt(tb.gamma_c / min_eig_sym(tb.P_c));
  CHECK(ax_tube <= ax_static + 1e-9);
}

TEST_CASE("empty tightened sets are reported as structured errors") {
  const auto m = desk_model();
  const auto obs = observer_synthesize(m, fixtures::desk_Qw0(), fixtures::desk_Qeta0());
  const auto ctrl = controller_synthesize_tube(m, obs);
  // output box far tighter than the combined RPI shadow
  try {
    build_tightened_sets(m, obs, ctrl, sym_interval(2.0), sym_interval(1e-6));
    FAIL("expected emptiness error");
  } catch (const Error& e) {
    CHECK(e.kind() == "empty_tightened_set");
  }
}
