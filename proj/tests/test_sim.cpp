#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "deltiss/sim.hpp"
#include "fixtures.hpp"

using namespace deltiss;
using namespace deltiss::sim;
using Catch::Approx;

namespace {

DesignBundle tube_bundle() {
  const auto& B = fixtures::desk_tube_bundle();
  DesignBundle bundle;
  bundle.observer = B.obs;
  bundle.controller = B.ctrl;
  bundle.terminal = B.term;
  bundle.tight = B.tight;
  bundle.U = B.U;
  bundle.Y = B.Y;
  bundle.Lambda_x = B.Lambda_x;
  bundle.Lambda_u = B.Lambda_u;
  return bundle;
}

ReferenceSchedule const_ref(double v) {
  return ReferenceSchedule{{{0, VectorXd::Constant(1, v)}}};
}

}  // namespace

TEST_CASE("static law at the equilibrium is a fixed point") {
  const auto& B = fixtures::desk_tube_bundle();
  auto bundle = tube_bundle();
  // reuse the tube gain as a static law around ybar = 0
  bundle.controller.mode = synth::ControllerDesign::Mode::Static;
  bundle.controller.setpoint = B.sp;

  SimConfig cfg;
  cfg.controller = SimConfig::Controller::Static;
  cfg.schedule = const_ref(0.0);
  cfg.policy = DisturbancePolicy::Mode::Zero;
  cfg.T = 100;
  const auto traj = run_closed_loop(B.m, bundle, cfg);
  REQUIRE(traj.length() == 100);
  for (std::size_t k = 0; k < traj.length(); ++k) {
    CHECK((traj.x[k] - B.sp.x_bar).cwiseAbs().maxCoeff() <= 1e-7);
    CHECK(traj.flags[k].tube_ok);
    CHECK(traj.flags[k].u_ok);
    CHECK(traj.flags[k].y_ok);
  }
}

TEST_CASE("nmpc from the equilibrium keeps u at u_bar under zero noise") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = tube_bundle();
  SimConfig cfg;
  cfg.controller = SimConfig::Controller::Nmpc;
  cfg.horizon = 5;
  cfg.schedule = const_ref(0.0);
  cfg.policy = DisturbancePolicy::Mode::Zero;
  cfg.T = 20;
  const auto traj = run_closed_loop(B.m, bundle, cfg);
  for (std::size_t k = 0; k < traj.length(); ++k) {
    CHECK((traj.u[k] - B.sp.u_bar).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(traj.flags[k].tube_ok);
  }
}

TEST_CASE("disturbed nmpc run tracks setpoint changes inside the tubes") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = tube_bundle();
  SimConfig cfg;
  cfg.controller = SimConfig::Controller::Nmpc;
  cfg.horizon = 8;
  cfg.schedule = ReferenceSchedule{{{0, VectorXd::Constant(1, 0.0)},
                                    {40, VectorXd::Constant(1, 0.25)},
                                    {80, VectorXd::Constant(1, -0.2)}}};
  cfg.policy = DisturbancePolicy::Mode::Boundary;
  cfg.T = 120;
  cfg.seed = 5;
  const auto traj = run_closed_loop(B.m, bundle, cfg);
  int checked = 0;
  for (std::size_t k = 0; k < traj.length(); ++k) {
    const auto& f = traj.flags[k];
    CHECK(f.tube_ok);
    CHECK(f.u_ok);
    CHECK(f.y_ok);
    CHECK(f.locality_ok);
    if (f.candidate_checked) {
      CHECK(f.candidate_feasible);
      ++checked;
    }
  }
  CHECK(checked >= 110);  // all steps except the three segment starts
  // output settles near the final target
  const VectorXd tail = traj.y.back();
  CHECK(std::abs(tail[0] + 0.2) < 0.1);
}

TEST_CASE("trajectories are bitwise reproducible from the seed") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = tube_bundle();
  SimConfig cfg;
  cfg.controller = SimConfig::Controller::Nmpc;
  cfg.horizon = 4;
  cfg.schedule = const_ref(0.1);
  cfg.policy = DisturbancePolicy::Mode::Uniform;
  cfg.T = 25;
  cfg.seed = 42;
  std::ostringstream a, b;
  run_closed_loop(B.m, bundle, cfg).write_csv(a);
  run_closed_loop(B.m, bundle, cfg).write_csv(b);
  CHECK(a.str() == b.str());
  cfg.seed = 43;
  std::ostringstream c;
  run_closed_loop(B.m, bundle, cfg).write_csv(c);
  CHECK(a.str() != c.str());
}

TEST_CASE("verification suites pass on the certified bundle") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = tube_bundle();
  const auto rep = verify_design(B.m, bundle, 2000, Rng(7));
  REQUIRE(rep.suites.size() >= 5);
  for (const auto& s : rep.suites) {
    INFO(s.name << " worst margin " << s.worst_margin);
    CHECK(s.violations == 0);
  }
  CHECK(rep.ok());
}

TEST_CASE("a corrupted gain is caught by the verification harness") {
  const auto& B = fixtures::desk_tube_bundle();
  auto bundle = tube_bundle();
  bundle.controller.K = -bundle.controller.K;
  const auto rep = verify_design(B.m, bundle, 2000, Rng(7));
  int total_violations = 0;
  for (const auto& s : rep.suites) total_violations += s.violations;
  CHECK(total_violations > 0);
  CHECK_FALSE(rep.ok());
}

TEST_CASE("smaller disturbance sets give a tighter stationary neighbourhood") {
  const auto& B = fixtures::desk_tube_bundle();
  auto m = B.m;
  // static architecture, same gain, two disturbance scales
  auto run_tail = [&](double scale, std::uint64_t seed) {
    auto bundle = tube_bundle();
    bundle.controller.mode = synth::ControllerDesign::Mode::Static;
    bundle.controller.setpoint = B.sp;
    bundle.observer.Q_w0 = fixtures::desk_Qw0() / (scale * scale);
    bundle.observer.Q_eta0 = fixtures::desk_Qeta0() / (scale * scale);
    SimConfig cfg;
    cfg.controller = SimConfig::Controller::Static;
    cfg.schedule = const_ref(0.0);
    cfg.policy = DisturbancePolicy::Mode::Boundary;
    cfg.T = 500;
    cfg.seed = seed;
    const auto traj = run_closed_loop(m, bundle, cfg);
    double worst = 0.0;
    for (std::size_t k = traj.length() / 2; k < traj.length(); ++k) {
      worst = std::max(worst, (traj.x[k] - B.sp.x_bar).norm());
    }
    return worst;
  };
  const double small = run_tail(1.0, 11);
  const double large = run_tail(4.0, 11);
  CHECK(small > 0.0);
  CHECK(small < large);
}

TEST_CASE("roa sweep honours the variant ordering on a small grid") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = tube_bundle();
  RoaOptions opts;
  for (int i = 0; i < 5; ++i) {
    opts.ybar0_grid.push_back(-0.4 + 0.2 * i);
    opts.ybar_grid.push_back(-0.4 + 0.2 * i);
  }
  opts.horizons = {3};
  opts.run_length = 40;
  opts.seed = 3;
  opts.jobs = 2;
  const auto map = roa_sweep(B.m, bundle, opts);
  REQUIRE(map.cells.size() == 5 * 5 * 2);

  auto feasible = [&](const std::string& variant, double y0, double y1) {
    for (const auto& c : map.cells) {
      if (c.variant == variant && c.ybar0 == y0 && c.ybar == y1) return c.feasible;
    }
    FAIL("cell not found");
    return false;
  };
  for (double y : opts.ybar_grid) {
    CHECK(feasible("static", y, y));  // diagonal: already at the target
    CHECK(feasible("nmpc3", y, y));
  }
  for (double y0 : opts.ybar0_grid) {
    for (double y1 : opts.ybar_grid) {
      if (feasible("static", y0, y1)) CHECK(feasible("nmpc3", y0, y1));
    }
  }

  // job count must not affect the result
  RoaOptions seq = opts;
  seq.jobs = 1;
  const auto map2 = roa_sweep(B.m, bundle, seq);
  std::ostringstream a, b;
  map.write_csv(a);
  map2.write_csv(b);
  CHECK(a.str() == b.str());
}
