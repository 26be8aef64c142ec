#include <catch2/catch_amalgamated.hpp>

#include "deltiss/nmpc.hpp"
#include "deltiss/rng.hpp"
#include "fixtures.hpp"

using namespace deltiss;
using namespace deltiss::nmpc;
using Catch::Approx;

TEST_CASE("equilibrium instance solves to zero cost") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto spec = B.fhocp_spec(5);
  Fhocp problem(B.m, spec, B.sp.x_bar);
  const auto sol = problem.solve();
  REQUIRE(sol.status == FhocpSolution::Status::Optimal);
  CHECK(sol.cost == Approx(0.0).margin(1e-9));
  CHECK((sol.u_seq[0] - B.sp.u_bar).cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(sol.max_violation <= 1e-6);
}

TEST_CASE("all-equilibrium candidate is feasible for displaced estimates") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto spec = B.fhocp_spec(4);
  Rng rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd x_hat = B.sp.x_bar + B.ctrl.rpi().sample(rng);
    Fhocp problem(B.m, spec, x_hat);
    std::vector<VectorXd> xs(spec.N + 1, B.sp.x_bar), us(spec.N, B.sp.u_bar);
    const auto rep = problem.report(problem.pack(xs, us));
    CHECK(rep.ok(1e-9));
  }
}

TEST_CASE("single-step horizon keeps the terminal constraint on x1") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto spec = B.fhocp_spec(1);
  Fhocp problem(B.m, spec, B.sp.x_bar);
  CHECK(problem.n_vars() == 2 * B.m.n() + B.m.m());
  const auto sol = problem.solve();
  REQUIRE(sol.status == FhocpSolution::Status::Optimal);
  REQUIRE(sol.x_seq.size() == 2);
  const VectorXd d = sol.x_seq[1] - B.sp.x_bar;
  CHECK(d.dot((B.term.P_f / B.term.gamma_f) * d) <= 1.0 + 1e-6);
}

TEST_CASE("unreachable terminal set is declared infeasible") {
  const auto& B = fixtures::desk_tube_bundle();
  auto spec = B.fhocp_spec(1);
  // interval bound on the one-step reach |x1|_inf from the admissible head
  // states and tightened inputs; the relocated terminal ball sits far beyond
  const double x0_max = B.sp.x_bar.cwiseAbs().maxCoeff() + 10.0;
  const double u_max = B.tight.U_tilde.b.maxCoeff();
  const double v_max = B.m.A_tilde().cwiseAbs().sum() * x0_max +
                       B.m.B_tilde().cwiseAbs().sum() * u_max;
  const double q_max = v_max;  // |q(v)| <= |v|
  const double reach = B.m.A().cwiseAbs().rowwise().sum().maxCoeff() * x0_max +
                       B.m.B().cwiseAbs().rowwise().sum().maxCoeff() * u_max +
                       B.m.B_q().cwiseAbs().rowwise().sum().maxCoeff() * q_max;
  spec.terminal.setpoint.x_bar = VectorXd::Constant(2, 10.0 * reach);
  Fhocp problem(B.m, spec, B.sp.x_bar);
  const auto sol = problem.solve();
  CHECK(sol.status == FhocpSolution::Status::Infeasible);
  CHECK(sol.max_violation > 0.0);
}

TEST_CASE("setpoint step solves with outputs inside the tightened set") {
  const auto& B = fixtures::desk_tube_bundle();
  auto m = B.m;
  VectorXd yb(1);
  yb << 0.3;
  const auto sp2 = model::equilibrium(m, yb);
  const auto term2 =
      synth::terminal_synthesize(m, B.ctrl.K, B.Lambda_x, B.Lambda_u, B.tight,
                                 B.obs, B.ctrl, sp2);
  nmpc::FhocpSpec spec{10,    B.Lambda_x, B.Lambda_u, term2, B.tight,
                       sp2,   B.ctrl.rpi(), B.ctrl.K};
  // start from the old equilibrium
  Fhocp problem(m, spec, B.sp.x_bar);
  const auto sol = problem.solve();
  REQUIRE(sol.status == FhocpSolution::Status::Optimal);
  for (int t = 0; t < spec.N; ++t) {
    CHECK(B.tight.Y_tilde.contains(m.C() * sol.x_seq[t], 1e-6));
    CHECK(B.tight.U_tilde.contains(sol.u_seq[t], 1e-6));
  }
  CHECK(sol.cost > 0.0);
}

TEST_CASE("receding horizon controller returns the tube law input") {
  const auto& B = fixtures::desk_tube_bundle();
  TubeMpc mpc(B.m, B.fhocp_spec(5));
  // at the equilibrium the plan is the equilibrium and u = u_bar
  const auto info = mpc.step(B.sp.x_bar);
  CHECK(info.segment_start);
  CHECK((info.u - B.sp.u_bar).cwiseAbs().maxCoeff() <= 1e-6);

  // with x_hat equal to the planned head state, u is exactly u_tilde(0)
  const auto info2 = mpc.step(info.sol.x_seq[1]);
  CHECK(info2.candidate_checked);
  CHECK(info2.candidate_feasible);
  CHECK((info2.u - info2.sol.u_seq[0]).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("shifted candidate stays feasible along a disturbed run") {
  const auto& B = fixtures::desk_tube_bundle();
  auto m = B.m;
  TubeMpc mpc(m, B.fhocp_spec(6));
  Rng rng(301);
  const auto E_w = geom::Ellipsoid(fixtures::desk_Qw0());
  const auto E_eta = geom::Ellipsoid(fixtures::desk_Qeta0());

  VectorXd x = B.sp.x_bar + 0.5 * B.ctrl.rpi().sample(rng);
  VectorXd x_hat = x;  // zero initial estimation error
  for (int k = 0; k < 30; ++k) {
    const auto info = mpc.step(x_hat);
    if (k > 0) {
      REQUIRE(info.candidate_checked);
      CHECK(info.candidate_feasible);
    }
    CHECK(info.sol.status != FhocpSolution::Status::Infeasible);
    const VectorXd w = E_w.sample(rng);
    const VectorXd eta = E_eta.sample(rng);
    const VectorXd y = m.output(x, eta);
    x = m.plant_step(x, info.u, w).first;
    x_hat = m.observer_step(B.obs.L, B.obs.L_tilde, x_hat, info.u, y).first;
  }
}

TEST_CASE("disturbance-free cost decreases by at least the stage cost") {
  const auto& B = fixtures::desk_tube_bundle();
  auto m = B.m;
  TubeMpc mpc(m, B.fhocp_spec(8));
  Rng rng(911);
  VectorXd x = B.sp.x_bar + 0.4 * B.ctrl.rpi().sample(rng);
  double prev_cost = kInf;
  double prev_stage = 0.0;
  for (int k = 0; k < 15; ++k) {
    const auto info = mpc.step(x);
    if (k > 0) {
      CHECK(info.sol.cost <= prev_cost - prev_stage + 1e-6);
    }
    prev_cost = info.sol.cost;
    const VectorXd dx = info.sol.x_seq[0] - B.sp.x_bar;
    const VectorXd du = info.sol.u_seq[0] - B.sp.u_bar;
    prev_stage = dx.dot(B.Lambda_x * dx) + du.dot(B.Lambda_u * du);
    x = m.plant_step(x, info.u, VectorXd::Zero(1)).first;  // x_hat == x
  }
}

TEST_CASE("terminal invariance under the auxiliary law") {
  const auto& B = fixtures::desk_tube_bundle();
  auto m = B.m;
  Rng rng(513);
  const auto Xf = B.term.terminal_set();
  const MatrixXd Qf = B.term.P_f / B.term.gamma_f;
  for (int i = 0; i < 10000; ++i) {
    const VectorXd xt = Xf.sample(rng);
    const VectorXd ut = B.sp.u_bar + B.ctrl.K * (xt - B.sp.x_bar);
    const VectorXd xn = m.nominal_step(xt, ut).first;
    const VectorXd d = xn - B.sp.x_bar;
    const VectorXd d0 = xt - B.sp.x_bar;
    CHECK(d.dot(Qf * d) <= 1.0 + 1e-8);
    const double decrease = d.dot(B.term.P_f * d) - d0.dot(B.term.P_f * d0);
    const double stage = d0.dot(B.Lambda_x * d0) +
                         (ut - B.sp.u_bar).dot(B.Lambda_u * (ut - B.sp.u_bar));
    CHECK(decrease <= -stage + 1e-8);
  }
}
