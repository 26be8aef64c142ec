#pragma once

#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deltiss/model.hpp"
#include "deltiss/sim.hpp"
#include "deltiss/synthesis.hpp"

namespace deltiss::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Helpers

inline json mat_to_json(const MatrixXd& m) {
  json a = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  }
  return a;
}

inline MatrixXd mat_from_json(const json& j, int rows, int cols,
                              const std::string& field) {
  require(j.is_array(), "schema", "field '" + field + "' must be an array");
  require(static_cast<int>(j.size()) == rows * cols, "schema",
          "field '" + field + "' must hold " + std::to_string(rows * cols) +
              " numbers (row-major " + std::to_string(rows) + "x" +
              std::to_string(cols) + ")");
  MatrixXd m(rows, cols);
  int k = 0;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c, ++k) {
      require(j[k].is_number(), "schema",
              "field '" + field + "' has a non-numeric entry");
      m(r, c) = j[k].get<double>();
      require(std::isfinite(m(r, c)), "schema",
              "field '" + field + "' has a non-finite entry");
    }
  }
  return m;
}

inline VectorXd vec_from_json(const json& j, int n, const std::string& field) {
  return mat_from_json(j, n, 1, field);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "file", "cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("schema", "malformed JSON in '" + path + "': " + e.what());
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "file", "cannot write '" + path + "'");
  out << text;
}

// FNV-1a over file bytes, for manifests.
inline std::string content_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

inline std::optional<std::string> env_override(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v && *v) return std::string(v);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Model files

inline model::RnnModel model_from_json(const json& j) {
  for (const char* key : {"n", "m", "p", "d", "nu"}) {
    require(j.contains(key) && j[key].is_number_integer(), "schema",
            std::string("model file needs integer field '") + key + "'");
  }
  const int n = j["n"], mm = j["m"], p = j["p"], d = j["d"], nu = j["nu"];
  require(n > 0 && mm > 0 && p > 0 && d > 0 && nu > 0, "schema",
          "model dimensions must be positive");
  auto need = [&](const char* key, int r, int c) {
    require(j.contains(key), "schema",
            std::string("model file is missing '") + key + "'");
    return mat_from_json(j[key], r, c, key);
  };
  std::vector<model::SigmoidSpec> acts;
  require(j.contains("activations") && j["activations"].is_array() &&
              static_cast<int>(j["activations"].size()) == nu,
          "schema", "model file needs one activation name per channel");
  for (const auto& a : j["activations"]) {
    require(a.is_string() && a.get<std::string>() == "tanh", "schema",
            "unknown activation '" + a.dump() + "' (built-in family: tanh)");
    acts.push_back(model::SigmoidSpec::tanh_spec());
  }
  model::RnnModel m(need("A_x", n, n), need("B_u", n, mm), need("D_w", n, d),
                    need("B_sigma", n, nu), need("A_tilde", nu, n),
                    need("B_tilde", nu, mm), need("D_tilde", nu, d),
                    need("C", p, n), std::move(acts));
  for (const auto& act : m.activations()) act.spot_check();
  // reformulation identity on a deterministic probe grid
  Rng rng(12345);
  for (int t = 0; t < 16; ++t) {
    const VectorXd x = rng.gaussian_vector(n);
    const VectorXd u = rng.gaussian_vector(mm);
    const VectorXd w = 0.1 * rng.gaussian_vector(d);
    const VectorXd a = m.plant_step(x, u, w).first;
    const VectorXd b = m.step_sigma_form(x, u, w);
    require((a - b).cwiseAbs().maxCoeff() <= 1e-12, "schema",
            "model reformulation identity failed; matrices are inconsistent");
  }
  return m;
}

inline json model_to_json(const model::RnnModel& m) {
  json j;
  j["n"] = m.n();
  j["m"] = m.m();
  j["p"] = m.p();
  j["d"] = m.d();
  j["nu"] = m.nu();
  j["A_x"] = mat_to_json(m.A_x());
  j["B_u"] = mat_to_json(m.B_u());
  j["D_w"] = mat_to_json(m.D_w());
  j["B_sigma"] = mat_to_json(m.B_sigma());
  j["A_tilde"] = mat_to_json(m.A_tilde());
  j["B_tilde"] = mat_to_json(m.B_tilde());
  j["D_tilde"] = mat_to_json(m.D_tilde());
  j["C"] = mat_to_json(m.C());
  json acts = json::array();
  for (const auto& a : m.activations()) acts.push_back(a.kind);
  j["activations"] = acts;
  return j;
}

// Optional disturbance blocks ride along in the model file.
struct ModelFile {
  model::RnnModel model;
  std::optional<MatrixXd> Q_w0, Q_eta0;
};

inline ModelFile load_model(const std::string& path) {
  const json j = read_json_file(path);
  ModelFile out{model_from_json(j), {}, {}};
  if (j.contains("Q_w0")) {
    out.Q_w0 = mat_from_json(j["Q_w0"], out.model.d(), out.model.d(), "Q_w0");
    require(min_eig_sym(*out.Q_w0) > 0.0, "schema", "Q_w0 must be positive definite");
  }
  if (j.contains("Q_eta0")) {
    out.Q_eta0 = mat_from_json(j["Q_eta0"], out.model.p(), out.model.p(), "Q_eta0");
    require(min_eig_sym(*out.Q_eta0) > 0.0, "schema", "Q_eta0 must be positive definite");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Design bundles (self-contained: the model rides along so a bundle can be
// re-certified without external references)

namespace detail {

inline json polytope_to_json(const geom::Polytope& p) {
  return json{{"G", mat_to_json(p.G)}, {"b", mat_to_json(p.b)},
              {"rows", p.rows()}, {"dim", p.dim()}};
}

inline geom::Polytope polytope_from_json(const json& j, const std::string& field) {
  const int rows = j.at("rows"), dim = j.at("dim");
  return geom::Polytope(mat_from_json(j.at("G"), rows, dim, field + ".G"),
                        vec_from_json(j.at("b"), rows, field + ".b"));
}

// Boxes may have unbounded coordinates; JSON has no infinity, so those
// entries are stored as null.
inline json box_to_json(const geom::Box& b) {
  json a = json::array();
  for (int i = 0; i < b.dim(); ++i) {
    if (b.bounded(i)) {
      a.push_back(b.half_widths[i]);
    } else {
      a.push_back(nullptr);
    }
  }
  return a;
}

inline geom::Box box_from_json(const json& j, const std::string& field) {
  require(j.is_array(), "schema", field + " must be an array");
  VectorXd hw(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    hw[i] = j[i].is_null() ? kInf : j[i].get<double>();
  }
  return geom::Box(hw);
}

inline json setpoint_to_json(const model::Setpoint& sp) {
  return json{{"y_bar", mat_to_json(sp.y_bar)},
              {"x_bar", mat_to_json(sp.x_bar)},
              {"u_bar", mat_to_json(sp.u_bar)}};
}

inline model::Setpoint setpoint_from_json(const json& j, int n, int mm, int p) {
  return model::Setpoint{vec_from_json(j.at("y_bar"), p, "y_bar"),
                         vec_from_json(j.at("x_bar"), n, "x_bar"),
                         vec_from_json(j.at("u_bar"), mm, "u_bar")};
}

}  // namespace detail

struct DesignFile {
  model::RnnModel model;
  synth::DesignBundle bundle;
};

inline json design_to_json(const model::RnnModel& m,
                           const synth::DesignBundle& b) {
  json j;
  j["format"] = "deltiss-design";
  j["version"] = kVersion;
  j["model"] = model_to_json(m);
  const auto& o = b.observer;
  j["observer"] = {{"L", mat_to_json(o.L)},
                   {"L_tilde", mat_to_json(o.L_tilde)},
                   {"P_o", mat_to_json(o.P_o)},
                   {"gamma_o", o.gamma_o},
                   {"s_o", mat_to_json(o.s_o)},
                   {"h_o", mat_to_json(o.sector.h)},
                   {"Q_ox", mat_to_json(o.Q_ox)},
                   {"Q_owo", mat_to_json(o.Q_owo)},
                   {"Q_w0", mat_to_json(o.Q_w0)},
                   {"Q_eta0", mat_to_json(o.Q_eta0)}};
  const auto& c = b.controller;
  json cj = {{"mode", c.mode == synth::ControllerDesign::Mode::Static ? "static" : "tube"},
             {"K", mat_to_json(c.K)},
             {"P_c", mat_to_json(c.P_c)},
             {"gamma_c", c.gamma_c},
             {"h_c", mat_to_json(c.sector.h)},
             {"u_c", mat_to_json(c.u_c)},
             {"Q_cwc", mat_to_json(c.Q_cwc)},
             {"Qt_cx", mat_to_json(c.Qt_cx)}};
  if (c.setpoint) cj["setpoint"] = detail::setpoint_to_json(*c.setpoint);
  if (c.contained_U) cj["contained_U"] = detail::polytope_to_json(*c.contained_U);
  if (c.contained_Y) cj["contained_Y"] = detail::polytope_to_json(*c.contained_Y);
  j["controller"] = cj;
  if (b.terminal) {
    j["terminal"] = {{"P_f", mat_to_json(b.terminal->P_f)},
                     {"gamma_f", b.terminal->gamma_f},
                     {"h_f", mat_to_json(b.terminal->h_f)},
                     {"s_f", mat_to_json(b.terminal->s_f)},
                     {"setpoint", detail::setpoint_to_json(b.terminal->setpoint)}};
  }
  if (b.tight) {
    j["tightened"] = {{"U_tilde", detail::polytope_to_json(b.tight->U_tilde)},
                      {"Y_tilde", detail::polytope_to_json(b.tight->Y_tilde)},
                      {"V_c", detail::box_to_json(b.tight->V_c)},
                      {"V_o", detail::box_to_json(b.tight->V_o)}};
  }
  if (b.U) j["U"] = detail::polytope_to_json(*b.U);
  if (b.Y) j["Y"] = detail::polytope_to_json(*b.Y);
  j["Lambda_x"] = mat_to_json(b.Lambda_x);
  j["Lambda_u"] = mat_to_json(b.Lambda_u);
  json tr = json::array();
  for (const auto& a : b.transcript) {
    tr.push_back({{"stage", a.stage},
                  {"h", mat_to_json(a.h)},
                  {"gamma", a.gamma},
                  {"outcome", a.outcome}});
  }
  j["transcript"] = tr;
  return j;
}

inline void save_design(const std::string& path, const model::RnnModel& m,
                        const synth::DesignBundle& b) {
  write_text_file(path, design_to_json(m, b).dump(1) + "\n");
}

// Loads and re-certifies a bundle; a bundle that no longer certifies (stale
// or hand-edited) is rejected.
inline DesignFile load_design(const std::string& path, double tol_psd = 1e-7) {
  const json j = read_json_file(path);
  require(j.contains("format") && j["format"] == "deltiss-design", "schema",
          "'" + path + "' is not a design bundle");
  model::RnnModel m = model_from_json(j.at("model"));
  const int n = m.n(), mm = m.m(), p = m.p(), d = m.d(), nu = m.nu();

  synth::DesignBundle b;
  {
    const json& oj = j.at("observer");
    synth::ObserverDesign o;
    o.L = mat_from_json(oj.at("L"), n, p, "observer.L");
    o.L_tilde = mat_from_json(oj.at("L_tilde"), nu, p, "observer.L_tilde");
    o.P_o = mat_from_json(oj.at("P_o"), n, n, "observer.P_o");
    o.gamma_o = oj.at("gamma_o").get<double>();
    o.s_o = vec_from_json(oj.at("s_o"), nu, "observer.s_o");
    o.sector = model::SectorParams(vec_from_json(oj.at("h_o"), nu, "observer.h_o"),
                                   m.activations());
    o.Q_ox = mat_from_json(oj.at("Q_ox"), n, n, "observer.Q_ox");
    o.Q_owo = mat_from_json(oj.at("Q_owo"), d + p, d + p, "observer.Q_owo");
    o.Q_w0 = mat_from_json(oj.at("Q_w0"), d, d, "observer.Q_w0");
    o.Q_eta0 = mat_from_json(oj.at("Q_eta0"), p, p, "observer.Q_eta0");
    b.observer = std::move(o);
  }
  {
    const json& cj = j.at("controller");
    synth::ControllerDesign c;
    const std::string mode = cj.at("mode");
    require(mode == "static" || mode == "tube", "schema",
            "controller.mode must be 'static' or 'tube'");
    c.mode = mode == "static" ? synth::ControllerDesign::Mode::Static
                              : synth::ControllerDesign::Mode::Tube;
    c.K = mat_from_json(cj.at("K"), mm, n, "controller.K");
    c.P_c = mat_from_json(cj.at("P_c"), n, n, "controller.P_c");
    c.gamma_c = cj.at("gamma_c").get<double>();
    c.sector = model::SectorParams(vec_from_json(cj.at("h_c"), nu, "controller.h_c"),
                                   m.activations());
    c.u_c = vec_from_json(cj.at("u_c"), nu, "controller.u_c");
    c.Q_cwc = mat_from_json(cj.at("Q_cwc"), p + n, p + n, "controller.Q_cwc");
    c.Qt_cx = mat_from_json(cj.at("Qt_cx"), n, n, "controller.Qt_cx");
    if (cj.contains("setpoint")) {
      c.setpoint = detail::setpoint_from_json(cj.at("setpoint"), n, mm, p);
    }
    require(c.mode == synth::ControllerDesign::Mode::Tube || c.setpoint,
            "schema", "static controller bundles must carry their setpoint");
    if (cj.contains("contained_U")) {
      c.contained_U = detail::polytope_from_json(cj.at("contained_U"), "contained_U");
    }
    if (cj.contains("contained_Y")) {
      c.contained_Y = detail::polytope_from_json(cj.at("contained_Y"), "contained_Y");
    }
    b.controller = std::move(c);
  }
  if (j.contains("terminal")) {
    const json& tj = j.at("terminal");
    synth::TerminalIngredients t;
    t.P_f = mat_from_json(tj.at("P_f"), n, n, "terminal.P_f");
    t.gamma_f = tj.at("gamma_f").get<double>();
    t.h_f = vec_from_json(tj.at("h_f"), nu, "terminal.h_f");
    t.s_f = vec_from_json(tj.at("s_f"), nu, "terminal.s_f");
    t.setpoint = detail::setpoint_from_json(tj.at("setpoint"), n, mm, p);
    b.terminal = std::move(t);
  }
  if (j.contains("tightened")) {
    const json& gj = j.at("tightened");
    b.tight = synth::TightenedSets{
        detail::polytope_from_json(gj.at("U_tilde"), "U_tilde"),
        detail::polytope_from_json(gj.at("Y_tilde"), "Y_tilde"),
        detail::box_from_json(gj.at("V_c"), "V_c"),
        detail::box_from_json(gj.at("V_o"), "V_o")};
  }
  require(b.controller.mode != synth::ControllerDesign::Mode::Tube ||
              (b.terminal.has_value() && j.contains("tightened")),
          "schema", "tube bundles must carry terminal and tightened blocks");
  if (j.contains("U")) b.U = detail::polytope_from_json(j.at("U"), "U");
  if (j.contains("Y")) b.Y = detail::polytope_from_json(j.at("Y"), "Y");
  b.Lambda_x = mat_from_json(j.at("Lambda_x"), n, n, "Lambda_x");
  b.Lambda_u = mat_from_json(j.at("Lambda_u"), mm, mm, "Lambda_u");
  if (j.contains("transcript")) {
    for (const auto& a : j.at("transcript")) {
      b.transcript.push_back({a.at("stage"), vec_from_json(a.at("h"), nu, "h"),
                              a.at("gamma"), a.at("outcome")});
    }
  }

  // never hand back an uncertified design
  {
    const auto orep = synth::certify_observer(m, b.observer);
    require(orep.ok(tol_psd), "certification",
            "observer conditions fail to re-certify (worst block " +
                orep.worst().first + ")");
    const auto crep = synth::certify_controller(m, b.observer, b.controller);
    require(crep.ok(tol_psd), "certification",
            "controller conditions fail to re-certify (worst block " +
                crep.worst().first + ")");
    if (b.terminal) {
      require(b.tight.has_value(), "schema",
              "terminal ingredients need the tightened sets block");
      const auto trep = synth::certify_terminal(m, b.observer, b.controller,
                                                b.Lambda_x, b.Lambda_u,
                                                *b.tight, *b.terminal);
      require(trep.ok(tol_psd), "certification",
              "terminal conditions fail to re-certify (worst block " +
                  trep.worst().first + ")");
    }
  }
  return DesignFile{std::move(m), std::move(b)};
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::string model_path;
  std::string design_path;  // produced by synthesize, consumed by the rest
  std::string out_dir = ".";

  std::string mode = "tube";  // synthesize: static | tube
  VectorXd setpoint;          // design target (y_bar)
  bool static_containment = true;

  sim::SimConfig simulation;
  synth::SynthesisOptions loop;
  MatrixXd Lambda_x, Lambda_u;  // sized on load
  std::optional<geom::Polytope> U, Y;
  std::optional<MatrixXd> Q_w0, Q_eta0;  // override the model file blocks

  sim::RoaOptions sweep;
  int verify_samples = 10000;
};

inline RunConfig load_config(const std::string& path) {
  const json j = read_json_file(path);
  RunConfig cfg;
  require(j.contains("model"), "schema", "config needs a 'model' path");
  cfg.model_path = j.at("model").get<std::string>();
  if (j.contains("design")) cfg.design_path = j.at("design").get<std::string>();
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("mode")) cfg.mode = j.at("mode").get<std::string>();
  require(cfg.mode == "static" || cfg.mode == "tube", "schema",
          "mode must be 'static' or 'tube'");
  if (j.contains("static_containment")) {
    cfg.static_containment = j.at("static_containment").get<bool>();
  }

  if (j.contains("setpoint")) {
    const auto& s = j.at("setpoint");
    cfg.setpoint = VectorXd::Constant(1, 0.0);
    if (s.is_number()) {
      cfg.setpoint[0] = s.get<double>();
    } else {
      cfg.setpoint = vec_from_json(s, static_cast<int>(s.size()), "setpoint");
    }
  }

  if (j.contains("loop")) {
    const auto& l = j.at("loop");
    auto getd = [&](const char* k, double& dst) {
      if (l.contains(k)) dst = l.at(k).get<double>();
    };
    getd("gamma_max", cfg.loop.gamma_max);
    getd("eps_h", cfg.loop.eps_h);
    getd("eps_gamma", cfg.loop.eps_gamma);
    getd("wc_bound_scale", cfg.loop.wc_bound_scale);
    getd("beta_f1", cfg.loop.beta_f1);
    getd("beta_f2", cfg.loop.beta_f2);
    getd("h0_observer", cfg.loop.h0_observer);
    getd("h0_controller", cfg.loop.h0_controller);
    if (l.contains("budget")) cfg.loop.budget = l.at("budget").get<int>();
    if (l.contains("maximize_roa")) {
      cfg.loop.maximize_roa = l.at("maximize_roa").get<bool>();
    }
    require(cfg.loop.gamma_max > 0 && cfg.loop.eps_h > 0 && cfg.loop.eps_gamma > 0 &&
                cfg.loop.budget > 0,
            "schema", "loop parameters must be positive");
  }

  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    if (w.contains("Lambda_x")) {
      const auto& a = w.at("Lambda_x");
      const int n = static_cast<int>(std::sqrt(static_cast<double>(a.size())));
      cfg.Lambda_x = mat_from_json(a, n, n, "Lambda_x");
    }
    if (w.contains("Lambda_u")) {
      const auto& a = w.at("Lambda_u");
      const int n = static_cast<int>(std::sqrt(static_cast<double>(a.size())));
      cfg.Lambda_u = mat_from_json(a, n, n, "Lambda_u");
    }
  }

  if (j.contains("constraints")) {
    const auto& c = j.at("constraints");
    if (c.contains("G_u")) {
      const int rows = static_cast<int>(c.at("b_u").size());
      const int dim = static_cast<int>(c.at("G_u").size()) / rows;
      cfg.U = geom::Polytope(mat_from_json(c.at("G_u"), rows, dim, "G_u"),
                             vec_from_json(c.at("b_u"), rows, "b_u"));
    }
    if (c.contains("G_y")) {
      const int rows = static_cast<int>(c.at("b_y").size());
      const int dim = static_cast<int>(c.at("G_y").size()) / rows;
      cfg.Y = geom::Polytope(mat_from_json(c.at("G_y"), rows, dim, "G_y"),
                             vec_from_json(c.at("b_y"), rows, "b_y"));
    }
  }

  if (j.contains("disturbances")) {
    const auto& dd = j.at("disturbances");
    if (dd.contains("Q_w0")) {
      const int n = static_cast<int>(std::sqrt(static_cast<double>(dd.at("Q_w0").size())));
      cfg.Q_w0 = mat_from_json(dd.at("Q_w0"), n, n, "Q_w0");
    }
    if (dd.contains("Q_eta0")) {
      const int n = static_cast<int>(std::sqrt(static_cast<double>(dd.at("Q_eta0").size())));
      cfg.Q_eta0 = mat_from_json(dd.at("Q_eta0"), n, n, "Q_eta0");
    }
  }

  if (j.contains("simulation")) {
    const auto& s = j.at("simulation");
    if (s.contains("controller")) {
      cfg.simulation.controller = sim::parse_controller(s.at("controller"));
    }
    if (s.contains("horizon")) cfg.simulation.horizon = s.at("horizon").get<int>();
    if (s.contains("T")) cfg.simulation.T = s.at("T").get<int>();
    if (s.contains("seed")) cfg.simulation.seed = s.at("seed").get<std::uint64_t>();
    if (s.contains("e0_scale")) cfg.simulation.e0_scale = s.at("e0_scale").get<double>();
    if (s.contains("policy")) {
      cfg.simulation.policy = sim::DisturbancePolicy::parse(s.at("policy"));
    }
    if (s.contains("schedule")) {
      for (const auto& seg : s.at("schedule")) {
        require(seg.is_array() && seg.size() == 2, "schema",
                "schedule entries are [step, y_bar] pairs");
        cfg.simulation.schedule.segments.emplace_back(
            seg[0].get<int>(), VectorXd::Constant(1, seg[1].get<double>()));
      }
    }
  }
  if (cfg.simulation.schedule.segments.empty()) {
    cfg.simulation.schedule.segments.emplace_back(
        0, cfg.setpoint.size() ? cfg.setpoint : VectorXd::Zero(1));
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    auto grid = [&](const char* key) {
      std::vector<double> g;
      const auto& gj = s.at(key);
      if (gj.is_object()) {
        const double lo = gj.at("min"), hi = gj.at("max");
        const int count = gj.at("count");
        require(count >= 2, "schema", "sweep grids need at least 2 points");
        for (int i = 0; i < count; ++i) {
          g.push_back(lo + (hi - lo) * i / (count - 1));
        }
      } else {
        for (const auto& v : gj) g.push_back(v.get<double>());
      }
      return g;
    };
    if (s.contains("ybar0")) cfg.sweep.ybar0_grid = grid("ybar0");
    if (s.contains("ybar")) cfg.sweep.ybar_grid = grid("ybar");
    if (s.contains("horizons")) {
      cfg.sweep.horizons.clear();
      for (const auto& h : s.at("horizons")) cfg.sweep.horizons.push_back(h.get<int>());
    }
    if (s.contains("run_length")) cfg.sweep.run_length = s.at("run_length").get<int>();
    if (s.contains("policy")) {
      cfg.sweep.policy = sim::DisturbancePolicy::parse(s.at("policy"));
    }
    if (s.contains("jobs")) cfg.sweep.jobs = s.at("jobs").get<int>();
    cfg.sweep.seed = cfg.simulation.seed;
  }

  if (j.contains("verify_samples")) {
    cfg.verify_samples = j.at("verify_samples").get<int>();
  }

  // environment overrides (documented): paths and seeds
  if (auto v = env_override("DELTISS_MODEL")) cfg.model_path = *v;
  if (auto v = env_override("DELTISS_DESIGN")) cfg.design_path = *v;
  if (auto v = env_override("DELTISS_OUT")) cfg.out_dir = *v;
  if (auto v = env_override("DELTISS_SEED")) {
    cfg.simulation.seed = std::stoull(*v);
    cfg.sweep.seed = cfg.simulation.seed;
  }
  if (auto v = env_override("DELTISS_JOBS")) cfg.sweep.jobs = std::stoi(*v);
  return cfg;
}

}  // namespace deltiss::io
