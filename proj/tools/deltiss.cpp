// deltiss: LMI-based observer/controller synthesis and tube NMPC for a class
// of recurrent neural network plant models, with closed-loop simulation,
// Monte-Carlo verification and region-of-attraction sweeps.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "deltiss/io.hpp"
#include "deltiss/nmpc.hpp"
#include "deltiss/sim.hpp"
#include "deltiss/synthesis.hpp"

namespace fs = std::filesystem;
using namespace deltiss;
using nlohmann::json;

namespace {

struct CliArgs {
  std::string config;
  std::string out;
  std::string mode = "tube";
  int jobs = 0;  // 0 = take from config / environment
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "file", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

io::RunConfig load_run_config(const CliArgs& args) {
  io::RunConfig cfg = io::load_config(args.config);
  if (!args.out.empty()) cfg.out_dir = args.out;
  if (args.jobs > 0) cfg.sweep.jobs = args.jobs;
  if (cfg.design_path.empty()) cfg.design_path = cfg.out_dir + "/design.json";
  fs::create_directories(cfg.out_dir);
  return cfg;
}

void write_manifest(const io::RunConfig& cfg, const std::string& command,
                    const CliArgs& args, const json& extra = {}) {
  json m;
  m["tool"] = "deltiss";
  m["version"] = kVersion;
  m["command"] = command;
  m["config_hash"] = io::content_hash(slurp(args.config));
  m["seed"] = cfg.simulation.seed;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  io::write_text_file(cfg.out_dir + "/manifest.json", m.dump(1) + "\n");
}

std::pair<MatrixXd, MatrixXd> disturbance_shapes(const io::RunConfig& cfg,
                                                 const io::ModelFile& mf) {
  std::optional<MatrixXd> Qw = cfg.Q_w0 ? cfg.Q_w0 : mf.Q_w0;
  std::optional<MatrixXd> Qe = cfg.Q_eta0 ? cfg.Q_eta0 : mf.Q_eta0;
  require(Qw.has_value() && Qe.has_value(), "config",
          "disturbance shape matrices are needed (config or model file)");
  return {*Qw, *Qe};
}

MatrixXd default_weight(const MatrixXd& given, int dim) {
  if (given.size()) return given;
  return MatrixXd::Identity(dim, dim);
}

int cmd_synthesize(const CliArgs& args) {
  io::RunConfig cfg = load_run_config(args);
  cfg.mode = args.mode;
  const auto mf = io::load_model(cfg.model_path);
  const auto& m = mf.model;
  const auto [Qw0, Qe0] = disturbance_shapes(cfg, mf);
  require(cfg.setpoint.size() == m.p(), "config",
          "synthesize needs a setpoint of output dimension");
  const auto sp = model::equilibrium(m, cfg.setpoint);
  const MatrixXd Lx = default_weight(cfg.Lambda_x, m.n());
  const MatrixXd Lu = default_weight(cfg.Lambda_u, m.m());

  synth::DesignBundle bundle;
  bundle.Lambda_x = Lx;
  bundle.Lambda_u = Lu;
  bundle.U = cfg.U;
  bundle.Y = cfg.Y;
  if (cfg.mode == "tube") {
    require(cfg.U && cfg.Y, "config",
            "tube synthesis needs input and output constraint polytopes");
    auto res = synth::design_tube_pipeline(m, sp, Qw0, Qe0, *cfg.U, *cfg.Y, Lx,
                                           Lu, cfg.loop);
    bundle.observer = std::move(res.observer);
    bundle.controller = std::move(res.controller);
    bundle.terminal = std::move(res.terminal);
    bundle.tight = std::move(res.tight);
    bundle.transcript = std::move(res.transcript);
  } else {
    synth::Transcript tr;
    bundle.observer = synth::observer_synthesize(m, Qw0, Qe0, cfg.loop, &tr);
    const geom::Polytope* Ubox =
        (cfg.static_containment && cfg.U) ? &*cfg.U : nullptr;
    const geom::Polytope* Ybox =
        (cfg.static_containment && cfg.Y) ? &*cfg.Y : nullptr;
    bundle.controller = synth::controller_synthesize_static(
        m, bundle.observer, sp, cfg.loop, &tr, Ubox, Ybox);
    bundle.transcript = std::move(tr);
  }

  io::save_design(cfg.design_path, m, bundle);
  {
    json tr = json::array();
    for (const auto& a : bundle.transcript) {
      tr.push_back({{"stage", a.stage},
                    {"h", io::mat_to_json(a.h)},
                    {"gamma", a.gamma},
                    {"outcome", a.outcome}});
    }
    io::write_text_file(cfg.out_dir + "/transcript.json", tr.dump(1) + "\n");
  }
  write_manifest(cfg, "synthesize", args, {{"mode", cfg.mode}});
  std::cout << "design written to " << cfg.design_path << " ("
            << bundle.transcript.size() << " stage solves)\n";
  return 0;
}

int cmd_simulate(const CliArgs& args) {
  const io::RunConfig cfg = load_run_config(args);
  const auto design = io::load_design(cfg.design_path);
  const auto traj = sim::run_closed_loop(design.model, design.bundle, cfg.simulation);
  {
    std::ostringstream os;
    traj.write_csv(os);
    io::write_text_file(cfg.out_dir + "/trajectory.csv", os.str());
  }
  io::write_text_file(cfg.out_dir + "/plot_trajectory.gp",
                      "set datafile separator ','\n"
                      "set key autotitle columnhead\n"
                      "plot 'trajectory.csv' using 1:'y0' with lines, \\\n"
                      "     'trajectory.csv' using 1:'yref0' with lines, \\\n"
                      "     'trajectory.csv' using 1:'u0' with lines\n");
  write_manifest(cfg, "simulate", args);
  std::cout << "trajectory written to " << cfg.out_dir << "/trajectory.csv ("
            << traj.length() << " steps)\n";
  return 0;
}

int cmd_verify(const CliArgs& args) {
  const io::RunConfig cfg = load_run_config(args);
  const auto design = io::load_design(cfg.design_path);
  const auto rep = sim::verify_design(design.model, design.bundle,
                                      cfg.verify_samples, Rng(cfg.simulation.seed));
  json j;
  j["samples_per_suite"] = cfg.verify_samples;
  j["ok"] = rep.ok();
  json suites = json::array();
  for (const auto& s : rep.suites) {
    suites.push_back({{"name", s.name},
                      {"samples", s.samples},
                      {"violations", s.violations},
                      {"worst_margin", s.worst_margin}});
  }
  j["suites"] = suites;
  io::write_text_file(cfg.out_dir + "/verification.json", j.dump(1) + "\n");
  write_manifest(cfg, "verify", args);
  for (const auto& s : rep.suites) {
    std::cout << (s.violations == 0 ? "PASS " : "FAIL ") << s.name << " ("
              << s.samples << " samples, worst margin " << s.worst_margin
              << ")\n";
  }
  return rep.ok() ? 0 : 1;
}

int cmd_sweep(const CliArgs& args) {
  const io::RunConfig cfg = load_run_config(args);
  const auto design = io::load_design(cfg.design_path);
  const auto& m = design.model;
  auto bundle = design.bundle;
  require(bundle.controller.mode == synth::ControllerDesign::Mode::Static,
          "config",
          "the sweep shares one gain across variants; synthesize a static "
          "design (with containment) first");
  require(bundle.U && bundle.Y, "config",
          "the sweep needs the constraint polytopes in the design bundle");
  // reuse the static gain as the tube ancillary law and tighten around it
  bundle.controller = synth::tube_from_static(m, bundle.observer, bundle.controller);
  bundle.tight = synth::build_tightened_sets(m, bundle.observer, bundle.controller,
                                             *bundle.U, *bundle.Y);
  require(!cfg.sweep.ybar0_grid.empty() && !cfg.sweep.ybar_grid.empty(), "config",
          "sweep grids are empty");

  const auto map = sim::roa_sweep(m, bundle, cfg.sweep);
  {
    std::ostringstream os;
    map.write_csv(os);
    io::write_text_file(cfg.out_dir + "/roa.csv", os.str());
  }

  // per-variant counts and the cellwise inclusion summary
  std::vector<std::string> variants = {"static"};
  for (int N : cfg.sweep.horizons) variants.push_back("nmpc" + std::to_string(N));
  std::ostringstream table;
  table << "variant,feasible_cells,total_cells\n";
  for (const auto& v : variants) {
    int feas = 0, total = 0;
    for (const auto& c : map.cells) {
      if (c.variant == v) {
        ++total;
        feas += c.feasible;
      }
    }
    table << v << "," << feas << "," << total << "\n";
  }
  int counterexamples = 0;
  for (std::size_t k = 0; k + 1 < variants.size(); ++k) {
    for (const auto& a : map.cells) {
      if (a.variant != variants[k] || !a.feasible) continue;
      for (const auto& b : map.cells) {
        if (b.variant == variants[k + 1] && b.ybar0 == a.ybar0 &&
            b.ybar == a.ybar && !b.feasible) {
          ++counterexamples;
        }
      }
    }
  }
  table << "inclusion_counterexamples," << counterexamples << ",\n";
  io::write_text_file(cfg.out_dir + "/roa_summary.csv", table.str());
  io::write_text_file(
      cfg.out_dir + "/plot_roa.gp",
      "set datafile separator ','\n"
      "set key autotitle columnhead\n"
      "plot for [v in 'static nmpc3 nmpc10'] 'roa.csv' "
      "using (strcol(3) eq v && $4 ? $1 : NaN):2 title v\n");
  write_manifest(cfg, "sweep-roa", args, {{"jobs", cfg.sweep.jobs}});
  std::cout << table.str();
  return 0;
}

int cmd_inspect(const CliArgs& args) {
  const io::RunConfig cfg = load_run_config(args);
  const auto design = io::load_design(cfg.design_path);
  const auto& m = design.model;
  const auto& b = design.bundle;
  json j;
  j["model"] = {{"n", m.n()}, {"m", m.m()}, {"p", m.p()},
                {"d", m.d()}, {"nu", m.nu()}};
  const auto orep = synth::certify_observer(m, b.observer);
  const auto crep = synth::certify_controller(m, b.observer, b.controller);
  j["observer"] = {{"gamma_o", b.observer.gamma_o},
                   {"h_o", io::mat_to_json(b.observer.sector.h)},
                   {"worst_block", orep.worst().first},
                   {"worst_eig", orep.worst().second}};
  j["controller"] = {
      {"mode", b.controller.mode == synth::ControllerDesign::Mode::Static
                   ? "static"
                   : "tube"},
      {"gamma_c", b.controller.gamma_c},
      {"h_c", io::mat_to_json(b.controller.sector.h)},
      {"K", io::mat_to_json(b.controller.K)},
      {"worst_block", crep.worst().first},
      {"worst_eig", crep.worst().second}};
  if (b.terminal) {
    j["terminal"] = {{"gamma_f", b.terminal->gamma_f},
                     {"h_f", io::mat_to_json(b.terminal->h_f)}};
  }
  j["transcript_entries"] = b.transcript.size();
  io::write_text_file(cfg.out_dir + "/inspect.json", j.dump(1) + "\n");
  write_manifest(cfg, "inspect", args);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LMI synthesis and tube NMPC for RNN plant models"};
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "run configuration file")->required();
    sub->add_option("--out", args.out, "output directory (created if absent)");
  };
  auto* syn = app.add_subcommand("synthesize", "design observer and controller");
  add_common(syn);
  syn->add_option("--mode", args.mode, "static | tube")
      ->check(CLI::IsMember({"static", "tube"}));
  auto* simc = app.add_subcommand("simulate", "closed-loop run, writes a CSV");
  add_common(simc);
  auto* ver = app.add_subcommand("verify", "Monte-Carlo verification report");
  add_common(ver);
  auto* swp = app.add_subcommand("sweep-roa", "region-of-attraction comparison");
  add_common(swp);
  swp->add_option("--jobs", args.jobs, "worker threads");
  auto* ins = app.add_subcommand("inspect", "summarize a design bundle");
  add_common(ins);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (syn->parsed()) return cmd_synthesize(args);
    if (simc->parsed()) return cmd_simulate(args);
    if (ver->parsed()) return cmd_verify(args);
    if (swp->parsed()) return cmd_sweep(args);
    if (ins->parsed()) return cmd_inspect(args);
  } catch (const Error& e) {
    json err{{"error", e.kind()}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err{{"error", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 2;
}
