#pragma once

#include <atomic>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "deltiss/geometry.hpp"
#include "deltiss/model.hpp"
#include "deltiss/nmpc.hpp"
#include "deltiss/rng.hpp"
#include "deltiss/synthesis.hpp"

namespace deltiss::sim {

using model::RnnModel;
using synth::DesignBundle;

// ---------------------------------------------------------------------------
// Bounded disturbance generation

struct DisturbancePolicy {
  enum class Mode { Zero, Uniform, Boundary, WorstCase };
  Mode mode = Mode::Uniform;

  static Mode parse(const std::string& s) {
    if (s == "zero") return Mode::Zero;
    if (s == "uniform") return Mode::Uniform;
    if (s == "boundary") return Mode::Boundary;
    if (s == "worst-case") return Mode::WorstCase;
    throw Error("config", "unknown disturbance mode '" + s + "'");
  }
  static const char* name(Mode m) {
    switch (m) {
      case Mode::Zero: return "zero";
      case Mode::Uniform: return "uniform";
      case Mode::Boundary: return "boundary";
      case Mode::WorstCase: return "worst-case";
    }
    return "?";
  }
};

// Emits w(k) in E(Q_w0) and eta(k) in E(Q_eta0). Worst-case mode pushes along
// the direction that the error dynamics amplifies most (top generalized
// eigenvector of the P_o-weighted input map), with a random sign per step.
class DisturbanceSampler {
 public:
  DisturbanceSampler(const RnnModel& m, const synth::ObserverDesign& obs,
                     DisturbancePolicy::Mode mode, Rng rng)
      : mode_(mode), rng_(std::move(rng)), E_w_(obs.Q_w0), E_eta_(obs.Q_eta0) {
    if (mode_ == DisturbancePolicy::Mode::WorstCase) {
      w_dir_ = expanding_direction(obs.Q_w0, m.D(), obs.P_o);
      eta_dir_ = expanding_direction(obs.Q_eta0, obs.L, obs.P_o);
    }
  }

  std::pair<VectorXd, VectorXd> draw() {
    switch (mode_) {
      case DisturbancePolicy::Mode::Zero:
        return {VectorXd::Zero(E_w_.dim()), VectorXd::Zero(E_eta_.dim())};
      case DisturbancePolicy::Mode::Uniform:
        return {E_w_.sample(rng_), E_eta_.sample(rng_)};
      case DisturbancePolicy::Mode::Boundary:
        return {E_w_.sample_boundary(rng_), E_eta_.sample_boundary(rng_)};
      case DisturbancePolicy::Mode::WorstCase: {
        const double sw = rng_.uniform01() < 0.5 ? -1.0 : 1.0;
        const double se = rng_.uniform01() < 0.5 ? -1.0 : 1.0;
        return {sw * w_dir_, se * eta_dir_};
      }
    }
    return {};
  }

 private:
  // boundary point of E(Q) maximizing |P_o^{1/2} M v|
  static VectorXd expanding_direction(const MatrixXd& Q, const MatrixXd& M,
                                      const MatrixXd& P_o) {
    Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(
        (M.transpose() * P_o * M).eval(), Q);
    const VectorXd v = es.eigenvectors().col(Q.rows() - 1);
    const double r = std::sqrt(v.dot(Q * v));
    return v / r;
  }

  DisturbancePolicy::Mode mode_;
  Rng rng_;
  geom::Ellipsoid E_w_, E_eta_;
  VectorXd w_dir_, eta_dir_;
};

// ---------------------------------------------------------------------------
// Trajectories

struct StepFlags {
  std::string fhocp_status;  // empty for the static law
  bool segment_start = false;
  bool candidate_checked = false;
  bool candidate_feasible = false;
  bool tube_ok = true;
  bool locality_ok = true;
  bool u_ok = true;
  bool y_ok = true;
};

struct Trajectory {
  int n = 0, m = 0, p = 0, d = 0;
  bool has_nominal = false;
  std::vector<VectorXd> x, x_hat, x_tilde, u, u_tilde, y, w, eta;
  std::vector<StepFlags> flags;
  std::vector<VectorXd> y_ref;

  std::size_t length() const { return x.size(); }

  void write_csv(std::ostream& os) const {
    auto head = [&os](const std::string& base, int k) {
      for (int i = 0; i < k; ++i) os << base << i << ",";
    };
    os << "k,";
    head("x", n);
    head("xhat", n);
    if (has_nominal) head("xtilde", n);
    head("u", m);
    if (has_nominal) head("utilde", m);
    head("y", p);
    head("yref", p);
    head("w", d);
    head("eta", p);
    os << "fhocp_status,segment_start,candidate_checked,candidate_feasible,"
          "tube_ok,locality_ok,u_ok,y_ok\n";
    for (std::size_t k = 0; k < length(); ++k) {
      os << k << ",";
      auto emit = [&os](const VectorXd& v) {
        for (int i = 0; i < v.size(); ++i) os << fmt_double(v[i]) << ",";
      };
      emit(x[k]);
      emit(x_hat[k]);
      if (has_nominal) emit(x_tilde[k]);
      emit(u[k]);
      if (has_nominal) emit(u_tilde[k]);
      emit(y[k]);
      emit(y_ref[k]);
      emit(w[k]);
      emit(eta[k]);
      const auto& f = flags[k];
      os << (f.fhocp_status.empty() ? "static" : f.fhocp_status) << ","
         << f.segment_start << "," << f.candidate_checked << ","
         << f.candidate_feasible << "," << f.tube_ok << "," << f.locality_ok
         << "," << f.u_ok << "," << f.y_ok << "\n";
    }
  }
};

// Piecewise-constant output reference: (start step, value) segments.
struct ReferenceSchedule {
  std::vector<std::pair<int, VectorXd>> segments;  // sorted by start step

  const VectorXd& at(int k) const {
    require(!segments.empty() && segments.front().first == 0, "config",
            "reference schedule must start at step 0");
    const VectorXd* cur = &segments.front().second;
    for (const auto& [k0, v] : segments) {
      if (k0 <= k) cur = &v;
    }
    return *cur;
  }
  bool changes_at(int k) const {
    for (const auto& [k0, v] : segments) {
      if (k0 == k && k != 0) return true;
    }
    return false;
  }
};

struct SimConfig {
  enum class Controller { Static, Nmpc };
  Controller controller = Controller::Nmpc;
  int horizon = 10;
  ReferenceSchedule schedule;
  DisturbancePolicy::Mode policy = DisturbancePolicy::Mode::Uniform;
  int T = 500;
  std::uint64_t seed = 0;
  // initial estimation error as a fraction of the RPI boundary (0 = exact)
  double e0_scale = 0.0;
};

inline SimConfig::Controller parse_controller(const std::string& s) {
  if (s == "static") return SimConfig::Controller::Static;
  if (s == "nmpc") return SimConfig::Controller::Nmpc;
  throw Error("config", "unknown controller variant '" + s + "'");
}

namespace detail {

inline bool within_box(const VectorXd& v, const geom::Box& box, double tol) {
  return box.contains(v, tol);
}

// Locality windows of the observer argument, one half-width per channel
// (+inf when inactive): v within v_bar tightened by nothing here; the flags
// only record whether the sector characterizations applied along the run.
inline bool locality_flag(const synth::ObserverDesign& obs,
                          const model::SectorParams& sector_c, const VectorXd& v,
                          const VectorXd& v_hat) {
  for (int i : obs.sector.active) {
    if (std::abs(v[i]) > obs.sector.v_bars[i] + 1e-9) return false;
    if (std::abs(v_hat[i]) > obs.sector.v_bars[i] + 1e-9) return false;
  }
  for (int i : sector_c.active) {
    if (std::abs(v_hat[i]) > sector_c.v_bars[i] + 1e-9) return false;
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Closed-loop runs (plant = the RNN itself, stepped with sampled disturbances)

inline Trajectory run_closed_loop(const RnnModel& m, const DesignBundle& bundle,
                                  const SimConfig& cfg) {
  require(cfg.T >= 1, "config", "run length must be positive");
  const auto& obs = bundle.observer;
  const auto& ctrl = bundle.controller;
  const bool is_nmpc = cfg.controller == SimConfig::Controller::Nmpc;
  if (is_nmpc) {
    require(bundle.nmpc_ready(), "config",
            "NMPC simulation needs terminal ingredients and tightened sets");
  }

  Rng rng(cfg.seed);
  DisturbanceSampler dist(m, obs, cfg.policy, rng.fork(1));
  Rng init_rng = rng.fork(2);

  // start at the steady state of the first reference value
  auto sp = model::equilibrium(m, cfg.schedule.at(0));
  VectorXd x_hat = sp.x_bar;
  VectorXd x = x_hat;
  if (cfg.e0_scale > 0.0) {
    x = x_hat + cfg.e0_scale * obs.rpi().sample(init_rng);
  }
  require(obs.rpi().contains(x - x_hat, 1e-9), "initial_membership",
          "initial estimation error leaves the observer RPI set");

  auto target = model::equilibrium(m, cfg.schedule.at(0));
  std::optional<nmpc::TubeMpc> mpc;
  synth::SynthesisOptions terminal_opts;
  auto make_spec = [&](const model::Setpoint& spt) {
    const auto term = synth::terminal_synthesize(
        m, ctrl.K, bundle.Lambda_x, bundle.Lambda_u, *bundle.tight, obs, ctrl,
        spt, terminal_opts);
    return nmpc::FhocpSpec{cfg.horizon, bundle.Lambda_x, bundle.Lambda_u,
                           term,        *bundle.tight,   spt,
                           ctrl.rpi(),  ctrl.K};
  };
  if (is_nmpc) {
    mpc.emplace(m, make_spec(target));
  } else {
    require(ctrl.rpi().contains(x_hat - target.x_bar, 1e-9), "initial_membership",
            "initial estimate leaves the static-law region of attraction");
  }

  Trajectory out;
  out.n = m.n();
  out.m = m.m();
  out.p = m.p();
  out.d = m.d();
  out.has_nominal = is_nmpc;

  const geom::Ellipsoid E_c = ctrl.rpi();
  for (int k = 0; k < cfg.T; ++k) {
    StepFlags flags;
    if (cfg.schedule.changes_at(k)) {
      target = model::equilibrium(m, cfg.schedule.at(k));
      if (is_nmpc) {
        mpc->retarget(make_spec(target));
      } else {
        flags.segment_start = true;
      }
    }

    VectorXd u, u_tilde, x_tilde;
    if (is_nmpc) {
      const auto info = mpc->step(x_hat);
      u = info.u;
      u_tilde = info.sol.u_seq[0];
      x_tilde = info.sol.x_seq[0];
      flags.fhocp_status = nmpc::to_string(info.sol.status);
      flags.segment_start = info.segment_start;
      flags.candidate_checked = info.candidate_checked;
      flags.candidate_feasible = info.candidate_feasible;
      // the optimizer may park the nominal head on the tube boundary, so
      // membership is judged at the NLP feasibility tolerance
      flags.tube_ok = E_c.contains(x_hat - x_tilde, 1e-6);
    } else {
      u = target.u_bar + ctrl.K * (x_hat - target.x_bar);
      flags.tube_ok = E_c.contains(x_hat - target.x_bar, 1e-6);
    }

    const auto [w, eta] = dist.draw();
    const VectorXd y = m.output(x, eta);
    const auto [x_next, v] = m.plant_step(x, u, w);
    const auto [xh_next, v_hat] = m.observer_step(obs.L, obs.L_tilde, x_hat, u, y);
    flags.locality_ok = detail::locality_flag(obs, ctrl.sector, v, v_hat);
    if (bundle.U) flags.u_ok = bundle.U->contains(u, 1e-6);
    if (bundle.Y) flags.y_ok = bundle.Y->contains(y, 1e-6);

    out.x.push_back(x);
    out.x_hat.push_back(x_hat);
    if (is_nmpc) {
      out.x_tilde.push_back(x_tilde);
      out.u_tilde.push_back(u_tilde);
    }
    out.u.push_back(u);
    out.y.push_back(y);
    out.y_ref.push_back(cfg.schedule.at(k));
    out.w.push_back(w);
    out.eta.push_back(eta);
    out.flags.push_back(std::move(flags));

    x = x_next;
    x_hat = xh_next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo verification of the designed invariants

struct SuiteResult {
  std::string name;
  int samples = 0;
  int violations = 0;
  double worst_margin = kInf;  // smallest slack observed (negative = violated)
};

struct VerificationReport {
  std::vector<SuiteResult> suites;
  bool ok() const {
    for (const auto& s : suites) {
      if (s.violations > 0) return false;
    }
    return true;
  }
};

namespace detail {

// half-widths of the observer-argument anchor region
//   (V(H_o) shrunk by both routes), used to place the free term of v
inline VectorXd anchor_box(const RnnModel& m, const synth::ObserverDesign& obs,
                           double fallback) {
  VectorXd hw = VectorXd::Constant(m.nu(), fallback);
  const geom::Ellipsoid E_o = obs.rpi();
  const geom::Ellipsoid E_w(obs.Q_w0), E_eta(obs.Q_eta0);
  const VectorXd one = VectorXd::Ones(1);
  for (int i : obs.sector.active) {
    const double plant_route = E_o.support(m.A_tilde().row(i), one) +
                               E_w.support(m.D_tilde().row(i), one);
    const double innov_route =
        E_o.support((obs.L_tilde.row(i) * m.C()).eval(), one) +
        E_eta.support(obs.L_tilde.row(i), one);
    hw[i] = obs.sector.v_bars[i] - std::max(plant_route, innov_route);
    require(hw[i] > 0.0, "empty_tightened_set",
            "observer anchor region is empty in channel " + std::to_string(i));
  }
  return hw;
}

}  // namespace detail

// One-step RPI containment, dissipation-inequality and sector-condition
// sampling for a certified bundle. Violations are counted at the stated
// tolerances; worst margins are reported either way.
inline VerificationReport verify_design(const RnnModel& m, const DesignBundle& bundle,
                                        int n_samples, Rng rng) {
  VerificationReport rep;
  const auto& obs = bundle.observer;
  const auto& ctrl = bundle.controller;
  const geom::Ellipsoid E_o = obs.rpi();
  const geom::Ellipsoid E_c = ctrl.rpi();
  const geom::Ellipsoid E_w(obs.Q_w0), E_eta(obs.Q_eta0);
  const MatrixXd A_L = obs.A_L(m);
  const MatrixXd A_K = ctrl.A_K(m);
  const MatrixXd At_K = ctrl.At_K(m);
  const MatrixXd Dc = synth::detail::D_c(m, obs);
  const MatrixXd Dtc = synth::detail::Dt_c(m, obs);
  const MatrixXd P_oq = obs.P_o / obs.gamma_o;
  const MatrixXd P_cq = ctrl.P_c / ctrl.gamma_c;
  const MatrixXd Q_cx = ctrl.P_c * ctrl.Qt_cx * ctrl.P_c;

  {  // incremental sector condition at the design's slope parameters
    SuiteResult s{"sector_incremental", 0, 0, kInf};
    const auto& acts = m.activations();
    for (int i = 0; i < m.nu(); ++i) {
      for (double h : {obs.sector.h[i], ctrl.sector.h[i]}) {
        const double vb = h > 1.0 ? model::sector_bound(acts[i], h) : 8.0;
        for (int t = 0; t < n_samples / 2; ++t) {
          const double v1 = rng.uniform(-vb, vb), v2 = rng.uniform(-vb, vb);
          const double dq = acts[i].q(v2) - acts[i].q(v1);
          const double margin = dq * ((v2 - v1) - h * dq) + 1e-12;
          s.worst_margin = std::min(s.worst_margin, margin);
          if (margin < 0.0) ++s.violations;
          ++s.samples;
        }
      }
    }
    rep.suites.push_back(s);
  }

  const VectorXd anchor_hw = detail::anchor_box(m, obs, 3.0);
  {  // observer error one-step containment in E(P_o/gamma_o)
    SuiteResult s{"observer_rpi", n_samples, 0, kInf};
    for (int t = 0; t < n_samples; ++t) {
      const VectorXd e = E_o.sample(rng);
      const VectorXd w = E_w.sample(rng);
      const VectorXd eta = E_eta.sample(rng);
      VectorXd anchor(m.nu());
      for (int i = 0; i < m.nu(); ++i) anchor[i] = rng.uniform(-anchor_hw[i], anchor_hw[i]);
      const VectorXd v = anchor + m.A_tilde() * e + m.D_tilde() * w;
      const VectorXd v_hat = anchor + obs.L_tilde * (m.C() * e + eta);
      const VectorXd e_next =
          A_L * e + m.D() * w - obs.L * eta + m.B_q() * (m.q(v) - m.q(v_hat));
      const double margin = 1.0 + 1e-8 - e_next.dot(P_oq * e_next);
      s.worst_margin = std::min(s.worst_margin, margin);
      if (margin < 0.0) ++s.violations;
    }
    rep.suites.push_back(s);
  }

  {  // observer dissipation inequality
    SuiteResult s{"observer_dissipation", n_samples, 0, kInf};
    for (int t = 0; t < n_samples; ++t) {
      const VectorXd e = E_o.sample(rng);
      const VectorXd w = E_w.sample(rng);
      const VectorXd eta = E_eta.sample(rng);
      VectorXd anchor(m.nu());
      for (int i = 0; i < m.nu(); ++i) anchor[i] = rng.uniform(-anchor_hw[i], anchor_hw[i]);
      const VectorXd v = anchor + m.A_tilde() * e + m.D_tilde() * w;
      const VectorXd v_hat = anchor + obs.L_tilde * (m.C() * e + eta);
      const VectorXd e_next =
          A_L * e + m.D() * w - obs.L * eta + m.B_q() * (m.q(v) - m.q(v_hat));
      VectorXd w_o(m.d() + m.p());
      w_o << w, eta;
      const double dV = e_next.dot(obs.P_o * e_next) - e.dot(obs.P_o * e);
      const double rhs =
          -e.dot(obs.Q_ox * e) + w_o.dot(obs.Q_owo * w_o) + 1e-8;
      const double margin = rhs - dV;
      s.worst_margin = std::min(s.worst_margin, margin);
      if (margin < 0.0) ++s.violations;
    }
    rep.suites.push_back(s);
  }

  // nominal-argument sampling box for the tube law (bounded channels use the
  // tightened locality box, the rest a moderate window)
  VectorXd tube_anchor_hw = VectorXd::Constant(m.nu(), 3.0);
  if (bundle.tight) {
    for (int i = 0; i < m.nu(); ++i) {
      if (bundle.tight->V_c.bounded(i)) {
        tube_anchor_hw[i] = bundle.tight->V_c.half_widths[i];
      }
    }
  }

  {  // controller/tube error one-step containment in E(P_c/gamma_c)
    SuiteResult s{"controller_rpi", n_samples, 0, kInf};
    const bool is_static = ctrl.mode == synth::ControllerDesign::Mode::Static;
    for (int t = 0; t < n_samples; ++t) {
      const VectorXd te = E_c.sample(rng);
      const VectorXd e = E_o.sample(rng);
      const VectorXd eta = E_eta.sample(rng);
      VectorXd w_c(m.p() + m.n());
      w_c << eta, e;
      VectorXd anchor(m.nu());
      if (is_static) {
        anchor = ctrl.setpoint->v_eq(m);
      } else {
        for (int i = 0; i < m.nu(); ++i) {
          anchor[i] = rng.uniform(-tube_anchor_hw[i], tube_anchor_hw[i]);
        }
      }
      const VectorXd v1 = anchor + At_K * te + Dtc * w_c;
      const VectorXd v2 = anchor;
      const VectorXd te_next =
          A_K * te + Dc * w_c + m.B_q() * (m.q(v1) - m.q(v2));
      const double margin = 1.0 + 1e-8 - te_next.dot(P_cq * te_next);
      s.worst_margin = std::min(s.worst_margin, margin);
      if (margin < 0.0) ++s.violations;
    }
    rep.suites.push_back(s);
  }

  {  // paired-trajectory controller dissipation
    SuiteResult s{"controller_dissipation", 0, 0, kInf};
    const VectorXd anchor0 = ctrl.setpoint
                                 ? ctrl.setpoint->v_eq(m)
                                 : VectorXd::Zero(m.nu());
    for (int t = 0; t < n_samples; ++t) {
      const VectorXd dx1 = E_c.sample(rng), dx2 = E_c.sample(rng);
      const VectorXd e1 = E_o.sample(rng), e2 = E_o.sample(rng);
      const VectorXd eta1 = E_eta.sample(rng), eta2 = E_eta.sample(rng);
      VectorXd wc1(m.p() + m.n()), wc2(m.p() + m.n());
      wc1 << eta1, e1;
      wc2 << eta2, e2;
      const VectorXd v1 = anchor0 + At_K * dx1 + Dtc * wc1;
      const VectorXd v2 = anchor0 + At_K * dx2 + Dtc * wc2;
      // sector validity precondition for both arguments
      bool in_window = true;
      for (int i : ctrl.sector.active) {
        if (std::abs(v1[i]) > ctrl.sector.v_bars[i] ||
            std::abs(v2[i]) > ctrl.sector.v_bars[i]) {
          in_window = false;
        }
      }
      if (!in_window) continue;
      const VectorXd n1 = A_K * dx1 + Dc * wc1 + m.B_q() * (m.q(v1) - m.q(anchor0));
      const VectorXd n2 = A_K * dx2 + Dc * wc2 + m.B_q() * (m.q(v2) - m.q(anchor0));
      const VectorXd dxp = n1 - n2;
      const VectorXd dx = dx1 - dx2;
      const VectorXd dwc = wc1 - wc2;
      const double dV = dxp.dot(ctrl.P_c * dxp) - dx.dot(ctrl.P_c * dx);
      const double rhs = -dx.dot(Q_cx * dx) + dwc.dot(ctrl.Q_cwc * dwc) + 1e-8;
      const double margin = rhs - dV;
      s.worst_margin = std::min(s.worst_margin, margin);
      if (margin < 0.0) ++s.violations;
      ++s.samples;
    }
    rep.suites.push_back(s);
  }

  if (bundle.terminal) {  // terminal invariance and cost decrease
    SuiteResult s{"terminal_invariance", n_samples, 0, kInf};
    const auto& term = *bundle.terminal;
    const auto Xf = term.terminal_set();
    const MatrixXd Qf = term.P_f / term.gamma_f;
    for (int t = 0; t < n_samples; ++t) {
      const VectorXd xt = Xf.sample(rng);
      const VectorXd ut =
          term.setpoint.u_bar + ctrl.K * (xt - term.setpoint.x_bar);
      const VectorXd xn = m.nominal_step(xt, ut).first;
      const VectorXd dn = xn - term.setpoint.x_bar;
      const VectorXd d0 = xt - term.setpoint.x_bar;
      const double member = 1.0 + 1e-8 - dn.dot(Qf * dn);
      const VectorXd du = ut - term.setpoint.u_bar;
      const double decrease = d0.dot(term.P_f * d0) - dn.dot(term.P_f * dn) -
                              d0.dot(bundle.Lambda_x * d0) -
                              du.dot(bundle.Lambda_u * du) + 1e-8;
      const double margin = std::min(member, decrease);
      s.worst_margin = std::min(s.worst_margin, margin);
      if (margin < 0.0) ++s.violations;
    }
    rep.suites.push_back(s);
  }

  return rep;
}

// ---------------------------------------------------------------------------
// Region-of-attraction sweep over (initial setpoint, target setpoint) pairs

struct RoaCell {
  double ybar0 = 0.0, ybar = 0.0;
  std::string variant;
  bool feasible = false;
};

struct RoaMap {
  std::vector<RoaCell> cells;

  void write_csv(std::ostream& os) const {
    os << "ybar0,ybar,variant,feasible\n";
    for (const auto& c : cells) {
      os << fmt_double(c.ybar0) << "," << fmt_double(c.ybar) << "," << c.variant
         << "," << (c.feasible ? 1 : 0) << "\n";
    }
  }
};

struct RoaOptions {
  std::vector<double> ybar0_grid, ybar_grid;
  std::vector<int> horizons = {3, 10};
  int run_length = 200;
  DisturbancePolicy::Mode policy = DisturbancePolicy::Mode::Uniform;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Feasibility of one NMPC cell: plan exists at k = 0 from the steady state of
// ybar0 and a fixed-length disturbed run tracks ybar without violations.
namespace detail {

inline bool nmpc_cell_feasible(const RnnModel& m, const DesignBundle& bundle,
                               const nmpc::FhocpSpec& spec,
                               const model::Setpoint& start, int run_length,
                               DisturbancePolicy::Mode policy, Rng rng) {
  nmpc::TubeMpc mpc(m, spec);
  DisturbanceSampler dist(m, bundle.observer, policy, std::move(rng));
  VectorXd x = start.x_bar, x_hat = start.x_bar;
  try {
    for (int k = 0; k < run_length; ++k) {
      const auto info = mpc.step(x_hat);
      if (info.sol.status == nmpc::FhocpSolution::Status::Infeasible) return false;
      const auto [w, eta] = dist.draw();
      const VectorXd y = m.output(x, eta);
      if (!bundle.U->contains(info.u, 1e-6) || !bundle.Y->contains(y, 1e-6)) {
        return false;
      }
      x = m.plant_step(x, info.u, w).first;
      x_hat = m.observer_step(bundle.observer.L, bundle.observer.L_tilde, x_hat,
                              info.u, y).first;
    }
  } catch (const Error&) {
    return false;
  }
  return true;
}

}  // namespace detail

// The sweep shares one observer and one ancillary gain across all variants;
// the static columns only need the membership test, the NMPC columns solve
// and run. Cells are independent and fan out to a small worker pool; results
// are merged by index so the output does not depend on the job count.
inline RoaMap roa_sweep(const RnnModel& m, const DesignBundle& bundle,
                        const RoaOptions& opts) {
  require(bundle.tight && bundle.U && bundle.Y, "config",
          "the sweep needs tightened sets and constraint polytopes");
  const auto& obs = bundle.observer;
  const auto& ctrl = bundle.controller;
  const geom::Ellipsoid E_c = ctrl.rpi();

  struct Target {
    bool admissible = false;
    std::optional<model::Setpoint> sp;
    std::vector<std::optional<nmpc::FhocpSpec>> specs;  // one per horizon
  };

  // resolve equilibria and per-target terminal ingredients once
  std::vector<std::optional<model::Setpoint>> starts(opts.ybar0_grid.size());
  for (std::size_t i = 0; i < opts.ybar0_grid.size(); ++i) {
    try {
      starts[i] = model::equilibrium(m, VectorXd::Constant(1, opts.ybar0_grid[i]));
    } catch (const Error&) {
    }
  }
  std::vector<Target> targets(opts.ybar_grid.size());
  for (std::size_t j = 0; j < opts.ybar_grid.size(); ++j) {
    auto& tg = targets[j];
    try {
      tg.sp = model::equilibrium(m, VectorXd::Constant(1, opts.ybar_grid[j]));
      const auto term = synth::terminal_synthesize(
          m, ctrl.K, bundle.Lambda_x, bundle.Lambda_u, *bundle.tight, obs, ctrl,
          *tg.sp);
      for (int N : opts.horizons) {
        tg.specs.emplace_back(nmpc::FhocpSpec{N, bundle.Lambda_x,
                                              bundle.Lambda_u, term,
                                              *bundle.tight, *tg.sp,
                                              ctrl.rpi(), ctrl.K});
      }
      tg.admissible = true;
    } catch (const Error&) {
      tg.admissible = false;
    }
  }

  const int n0 = static_cast<int>(opts.ybar0_grid.size());
  const int n1 = static_cast<int>(opts.ybar_grid.size());
  const int n_variants = 1 + static_cast<int>(opts.horizons.size());
  RoaMap map;
  map.cells.resize(static_cast<std::size_t>(n0) * n1 * n_variants);

  Rng base(opts.seed);
  auto work_cell = [&](int idx) {
    const int v = idx % n_variants;
    const int j = (idx / n_variants) % n1;
    const int i = idx / (n_variants * n1);
    RoaCell cell;
    cell.ybar0 = opts.ybar0_grid[i];
    cell.ybar = opts.ybar_grid[j];
    cell.variant =
        v == 0 ? "static" : ("nmpc" + std::to_string(opts.horizons[v - 1]));
    const auto& tg = targets[j];
    if (starts[i] && tg.admissible) {
      if (v == 0) {
        cell.feasible = E_c.contains(starts[i]->x_bar - tg.sp->x_bar);
      } else {
        // one disturbance stream per (start, target) pair, shared by the
        // horizon variants for a like-for-like comparison
        Rng cell_rng = base.fork(static_cast<std::uint64_t>(i) * n1 + j);
        cell.feasible = detail::nmpc_cell_feasible(
            m, bundle, *tg.specs[v - 1], *starts[i], opts.run_length,
            opts.policy, std::move(cell_rng));
      }
    }
    map.cells[idx] = std::move(cell);
  };

  const int total = n0 * n1 * n_variants;
  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1) {
    for (int idx = 0; idx < total; ++idx) work_cell(idx);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (int idx = next.fetch_add(1); idx < total; idx = next.fetch_add(1)) {
          work_cell(idx);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return map;
}

}  // namespace deltiss::sim
