#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "deltiss/io.hpp"
#include "fixtures.hpp"

using namespace deltiss;
using Catch::Approx;

namespace {

const std::string kModels = std::string(DELTISS_SOURCE_DIR) + "/models/";

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

synth::DesignBundle bundle_fixture() {
  const auto& B = fixtures::desk_tube_bundle();
  synth::DesignBundle b;
  b.observer = B.obs;
  b.controller = B.ctrl;
  b.terminal = B.term;
  b.tight = B.tight;
  b.U = B.U;
  b.Y = B.Y;
  b.Lambda_x = B.Lambda_x;
  b.Lambda_u = B.Lambda_u;
  return b;
}

}  // namespace

TEST_CASE("bundled desk model round-trips through its file") {
  const auto mf = io::load_model(kModels + "d1.json");
  const auto ref = fixtures::desk_model();
  CHECK((mf.model.A_x() - ref.A_x()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mf.model.C() - ref.C()).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(mf.Q_w0.has_value());
  CHECK((*mf.Q_w0)(0, 0) == 400.0);
  REQUIRE(mf.Q_eta0.has_value());
  CHECK((*mf.Q_eta0)(0, 0) == 1.0e4);
}

TEST_CASE("bundled eight-state model loads and passes its checks") {
  const auto mf = io::load_model(kModels + "ph8.json");
  CHECK(mf.model.n() == 8);
  CHECK(mf.model.nu() == 5);
  CHECK(synth::check_detectability(mf.model.A(), mf.model.C()));
  CHECK(synth::check_stabilizability(mf.model.A(), mf.model.B()));
  CHECK(mf.model.A().eigenvalues().cwiseAbs().maxCoeff() < 1.0);
}

TEST_CASE("schema violations name the failing field") {
  auto j = io::read_json_file(kModels + "d1.json");
  j["A_tilde"] = {0.5, 0.5, 0.7};  // wrong element count for 1x2
  const auto path = temp_path("deltiss_bad_model.json");
  io::write_text_file(path, j.dump());
  try {
    io::load_model(path);
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == "schema");
    CHECK(std::string(e.what()).find("A_tilde") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("non-finite model entries are rejected") {
  auto j = io::read_json_file(kModels + "d1.json");
  j["B_u"][0] = "oops";
  const auto path = temp_path("deltiss_nonnum_model.json");
  io::write_text_file(path, j.dump());
  CHECK_THROWS_AS(io::load_model(path), Error);
  std::remove(path.c_str());
}

TEST_CASE("design bundles round-trip bitwise and re-certify on load") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = bundle_fixture();
  const auto path = temp_path("deltiss_bundle.json");
  io::save_design(path, B.m, bundle);
  const auto loaded = io::load_design(path);
  CHECK((loaded.bundle.controller.K - bundle.controller.K).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.bundle.observer.P_o - bundle.observer.P_o).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.bundle.terminal->gamma_f == bundle.terminal->gamma_f);
  // saving the loaded bundle reproduces the file byte for byte
  const auto path2 = temp_path("deltiss_bundle2.json");
  io::save_design(path2, loaded.model, loaded.bundle);
  std::ifstream a(path), b(path2);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("hand-edited gains fail certification on load") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = bundle_fixture();
  const auto path = temp_path("deltiss_tampered.json");
  io::save_design(path, B.m, bundle);
  auto j = io::read_json_file(path);
  j["controller"]["K"][0] = j["controller"]["K"][0].get<double>() + 0.5;
  io::write_text_file(path, j.dump(1));
  try {
    io::load_design(path);
    FAIL("expected certification error");
  } catch (const Error& e) {
    CHECK(e.kind() == "certification");
  }
  std::remove(path.c_str());
}

TEST_CASE("tube bundles without terminal ingredients are rejected") {
  const auto& B = fixtures::desk_tube_bundle();
  const auto bundle = bundle_fixture();
  const auto path = temp_path("deltiss_no_terminal.json");
  io::save_design(path, B.m, bundle);
  auto j = io::read_json_file(path);
  j.erase("terminal");
  io::write_text_file(path, j.dump(1));
  try {
    io::load_design(path);
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == "schema");
  }
  std::remove(path.c_str());
}

TEST_CASE("config loading honours environment overrides") {
  const auto path = temp_path("deltiss_cfg.json");
  io::write_text_file(path, R"({
    "model": "models/d1.json",
    "mode": "tube",
    "setpoint": 0.0,
    "simulation": {"controller": "nmpc", "horizon": 4, "T": 10, "seed": 7,
                   "policy": "boundary"},
    "sweep": {"ybar0": {"min": -0.2, "max": 0.2, "count": 3},
              "ybar": [-0.1, 0.1], "horizons": [3], "jobs": 2}
  })");
  {
    const auto cfg = io::load_config(path);
    CHECK(cfg.model_path == "models/d1.json");
    CHECK(cfg.simulation.seed == 7);
    CHECK(cfg.sweep.ybar0_grid.size() == 3);
    CHECK(cfg.sweep.ybar_grid.size() == 2);
    CHECK(cfg.sweep.jobs == 2);
  }
  setenv("DELTISS_SEED", "99", 1);
  setenv("DELTISS_JOBS", "4", 1);
  setenv("DELTISS_MODEL", "elsewhere.json", 1);
  {
    const auto cfg = io::load_config(path);
    CHECK(cfg.simulation.seed == 99);
    CHECK(cfg.sweep.jobs == 4);
    CHECK(cfg.model_path == "elsewhere.json");
  }
  unsetenv("DELTISS_SEED");
  unsetenv("DELTISS_JOBS");
  unsetenv("DELTISS_MODEL");
  std::remove(path.c_str());
}
