#include <catch2/catch_amalgamated.hpp>

#include "deltiss/model.hpp"
#include "deltiss/rng.hpp"
#include "fixtures.hpp"

using namespace deltiss;
using namespace deltiss::model;
using Catch::Approx;
using fixtures::desk_model;

TEST_CASE("tanh spec passes the assumption spot checks") {
  SigmoidSpec::tanh_spec().spot_check();
}

TEST_CASE("sector bound closed form for tanh") {
  const auto act = SigmoidSpec::tanh_spec();
  CHECK(sector_bound(act, 1.0) == kInf);
  CHECK(sector_bound(act, 4.0) == Approx(std::atanh(0.5)).margin(1e-9));
  CHECK_THROWS_AS(sector_bound(act, 0.99), Error);

  // 1 - sigma'(v) = tanh(v)^2 for tanh, so v_bar(h) = atanh(1/sqrt(h))
  for (double h : {1.2, 2.0, 4.0, 10.0, 100.0}) {
    CHECK(sector_bound(act, h) == Approx(std::atanh(1.0 / std::sqrt(h))).margin(1e-9));
  }

  // grid-scan fallback validates the bisection: dq <= 1/h inside, > beyond
  const double h = 3.0, vb = sector_bound(act, h);
  for (int i = 0; i <= 1000; ++i) {
    const double v = vb * i / 1000.0;
    CHECK(act.dq(v) <= 1.0 / h + 1e-9);
  }
  CHECK(act.dq(vb + 1e-6) > 1.0 / h);

  // v_bar decreases monotonically toward 0 as h grows
  double prev = kInf;
  for (double hh = 1.5; hh < 1e6; hh *= 4.0) {
    const double vb2 = sector_bound(act, hh);
    CHECK(vb2 < prev);
    prev = vb2;
  }
  CHECK(prev < 1e-2);
}

TEST_CASE("incremental sector condition holds inside the validity box") {
  const auto act = SigmoidSpec::tanh_spec();
  Rng rng(17);
  for (double h : {1.0, 1.5, 2.0, 4.0}) {
    const double vb = std::isfinite(sector_bound(act, h)) ? sector_bound(act, h) : 10.0;
    for (int i = 0; i < 10000; ++i) {
      const double v = rng.uniform(-vb, vb);
      const double v2 = rng.uniform(-vb, vb);
      const double dq = act.q(v2) - act.q(v);
      const double dv = v2 - v;
      CHECK(dq * (dv - h * dq) >= -1e-12);
    }
  }
}

TEST_CASE("matrix sector form holds for any diagonal S") {
  const auto m = desk_model();
  const auto act = SigmoidSpec::tanh_spec();
  Rng rng(19);
  const double h = 2.0, vb = sector_bound(act, h);
  for (int i = 0; i < 2000; ++i) {
    const double s = rng.uniform(0.01, 10.0);
    const double v1 = rng.uniform(-vb, vb), v2 = rng.uniform(-vb, vb);
    const double dq = act.q(v1) - act.q(v2);
    const double dv = v1 - v2;
    CHECK(dq * s * (dv - h * dq) >= -1e-10);
  }
  (void)m;
}

TEST_CASE("q is monotone and 1-Lipschitz on a grid") {
  const auto act = SigmoidSpec::tanh_spec();
  double prev = act.q(-8.0);
  for (int i = 1; i <= 1600; ++i) {
    const double v = -8.0 + i * 0.01;
    const double qv = act.q(v);
    CHECK(qv >= prev - 1e-15);
    CHECK(qv - prev <= 0.01 + 1e-12);
    prev = qv;
  }
}

TEST_CASE("sector params track the active index set") {
  const std::vector<SigmoidSpec> acts(3, SigmoidSpec::tanh_spec());
  VectorXd h(3);
  h << 1.0, 2.0, 1.0;
  const SectorParams sp(h, acts);
  CHECK(sp.active == std::vector<int>{1});
  CHECK(sp.v_bars[0] == kInf);
  CHECK(std::isfinite(sp.v_bars[1]));
  CHECK(sp.v_bars[2] == kInf);
  CHECK_FALSE(sp.global());

  const SectorParams global(VectorXd::Ones(3), acts);
  CHECK(global.global());
}

TEST_CASE("plant step equals the sigma-form step") {
  const auto m = desk_model();
  Rng rng(29);
  for (int i = 0; i < 1000; ++i) {
    const VectorXd x = rng.gaussian_vector(2);
    const VectorXd u = rng.gaussian_vector(1);
    const VectorXd w = 0.05 * rng.gaussian_vector(1);
    const auto [xq, v] = m.plant_step(x, u, w);
    const VectorXd xs = m.step_sigma_form(x, u, w);
    CHECK((xq - xs).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("plant step basics") {
  const auto m = desk_model();
  const auto [x0, v0] = m.plant_step(VectorXd::Zero(2), VectorXd::Zero(1), VectorXd::Zero(1));
  CHECK(x0.norm() == Approx(0.0).margin(1e-15));

  // with B_sigma = 0 the step is purely linear
  RnnModel lin(m.A_x(), m.B_u(), m.D_w(), MatrixXd::Zero(2, 1), m.A_tilde(),
               m.B_tilde(), m.D_tilde(), m.C(), {SigmoidSpec::tanh_spec()});
  VectorXd x(2), u(1), w(1);
  x << 0.3, -0.7;
  u << 0.2;
  w << 0.01;
  const auto [xn, v] = lin.plant_step(x, u, w);
  CHECK((xn - (m.A_x() * x + m.B_u() * u + m.D_w() * w)).norm() == Approx(0.0).margin(1e-15));

  VectorXd bad(2);
  bad << 1.0, kInf;
  CHECK_THROWS_AS(m.plant_step(bad, u, w), Error);
}

TEST_CASE("observer step with zero innovation matches the plant") {
  const auto m = desk_model();
  Rng rng(31);
  const MatrixXd L = MatrixXd::Random(2, 1), Lt = MatrixXd::Random(1, 1);
  const VectorXd x = rng.gaussian_vector(2), u = rng.gaussian_vector(1);
  const VectorXd y = m.output(x, VectorXd::Zero(1));
  const auto [xh1, vh1] = m.observer_step(L, Lt, x, u, y);
  const auto [xp, vp] = m.plant_step(x, u, VectorXd::Zero(1));
  CHECK((xh1 - xp).cwiseAbs().maxCoeff() <= 1e-14);

  // zero gains propagate the open-loop model
  const auto [xh0, vh0] =
      m.observer_step(MatrixXd::Zero(2, 1), MatrixXd::Zero(1, 1), x, u, y);
  const auto [xol, vol] = m.plant_step(x, u, VectorXd::Zero(1));
  CHECK((xh0 - xol).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("observer error dynamics decomposition") {
  const auto m = desk_model();
  Rng rng(37);
  MatrixXd L(2, 1), Lt(1, 1);
  L << 0.3, 0.1;
  Lt << 0.2;
  const MatrixXd A_L = m.A() - L * m.C();
  for (int i = 0; i < 200; ++i) {
    const VectorXd x = rng.gaussian_vector(2), xh = rng.gaussian_vector(2);
    const VectorXd u = rng.gaussian_vector(1);
    const VectorXd w = 0.05 * rng.gaussian_vector(1);
    const VectorXd eta = 0.01 * rng.gaussian_vector(1);
    const VectorXd y = m.output(x, eta);

    const auto [xp, v] = m.plant_step(x, u, w);
    const auto [xhp, vh] = m.observer_step(L, Lt, xh, u, y);
    const VectorXd e_direct = xp - xhp;

    const VectorXd e = x - xh;
    const VectorXd e_form =
        A_L * e + m.D() * w - L * eta + m.B_q() * (m.q(v) - m.q(vh));
    CHECK((e_direct - e_form).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("equilibrium solving") {
  const auto m = desk_model();
  const auto sp0 = equilibrium(m, VectorXd::Zero(1));
  CHECK(sp0.x_bar.norm() == Approx(0.0).margin(1e-9));
  CHECK(sp0.u_bar.norm() == Approx(0.0).margin(1e-9));

  VectorXd yb(1);
  yb << 0.25;
  const auto sp = equilibrium(m, yb);
  const VectorXd v = m.A_tilde() * sp.x_bar + m.B_tilde() * sp.u_bar;
  const VectorXd res =
      sp.x_bar - (m.A_x() * sp.x_bar + m.B_u() * sp.u_bar + m.B_sigma() * m.sigma(v));
  CHECK(res.norm() <= 1e-9);
  CHECK((m.C() * sp.x_bar - yb).norm() <= 1e-9);

  // input acts only through the saturating channel: large targets unreachable
  MatrixXd A_x(1, 1), B_u(1, 1), D_w(1, 1), B_sigma(1, 1);
  MatrixXd A_tilde(1, 1), B_tilde(1, 1), D_tilde(1, 1), C(1, 1);
  A_x << 0.5;
  B_u << 0.0;
  D_w << 0.0;
  B_sigma << 1.0;
  A_tilde << 0.0;
  B_tilde << 1.0;
  D_tilde << 0.0;
  C << 1.0;
  RnnModel sat(A_x, B_u, D_w, B_sigma, A_tilde, B_tilde, D_tilde, C,
               {SigmoidSpec::tanh_spec()});
  VectorXd far(1);
  far << 5.0;  // steady-state output is bounded by 1/(1-0.5) = 2
  CHECK_THROWS_AS(equilibrium(sat, far), Error);

  // non-square setpoint maps are rejected
  MatrixXd C2(2, 2);
  C2 << 1, 0, 0, 1;
  RnnModel wide(MatrixXd::Identity(2, 2) * 0.5, MatrixXd::Ones(2, 1),
                MatrixXd::Zero(2, 1), MatrixXd::Zero(2, 1), MatrixXd::Zero(1, 2),
                MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1), C2,
                {SigmoidSpec::tanh_spec()});
  CHECK_THROWS_AS(equilibrium(wide, VectorXd::Zero(2)), Error);
}
