#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sys/wait.h>
#include <sstream>
#include <string>

#include <json.hpp>

#include "condcap/app.hpp"
#include "condcap/error.hpp"

using namespace condcap;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const json kTiny = json::parse(R"({
  "kernel": {"family": "gaussian", "width": 1.0},
  "plates": [
    {"sign": 1, "generator": {"type": "point_list", "points": [[0, 0, 0], [0.5, 0, 0], [0.2, 0.4, 0]]}, "count": 3},
    {"sign": -1, "generator": {"type": "point_list", "points": [[2, 0, 0], [2.5, 0.3, 0]]}, "count": 2}
  ],
  "g": {"constant": 1.0},
  "a": [1.0, 0.5]
})");

const json kCapacitor = json::parse(R"({
  "kernel": {"family": "newton", "dim": 3},
  "plates": [
    {"sign": 1, "generator": {"type": "sphere_shell", "radius": 1.0}, "count": 2000},
    {"sign": -1, "generator": {"type": "sphere_shell", "radius": 2.0}, "count": 2000}
  ],
  "g": {"constant": 1.0},
  "a": [1.0, 1.0]
})");

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("condcap_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path / name) << text;
    return path / name;
  }
};

std::string error_of(const json& doc) {
  try {
    (void)config_from_json(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing and validation errors") {
  CHECK_NOTHROW(config_from_json(kTiny));

  json bad_a = kTiny;
  bad_a["a"] = {1.0};
  const std::string ea = error_of(bad_a);
  REQUIRE_FALSE(ea.empty());
  CHECK(ea.find("'a'") != std::string::npos);

  json both_g = kTiny;
  both_g["g"] = {{"constant", 1.0}, {"table_file", "g.json"}};
  CHECK_FALSE(error_of(both_g).empty());
  json no_g = kTiny;
  no_g["g"] = json::object();
  CHECK_FALSE(error_of(no_g).empty());

  json unknown = kTiny;
  unknown["plats"] = 1;
  CHECK(error_of(unknown).find("plats") != std::string::npos);
  json nested_unknown = kTiny;
  nested_unknown["kernel"]["widht"] = 2;
  CHECK(error_of(nested_unknown).find("widht") != std::string::npos);

  json bad_kernel = kTiny;
  bad_kernel["kernel"]["width"] = -1.0;
  CHECK_FALSE(error_of(bad_kernel).empty());

  json exhaust_without_stages = kTiny;
  exhaust_without_stages["mode"] = "exhaust";
  CHECK(error_of(exhaust_without_stages).find("stages") != std::string::npos);
}

TEST_CASE("config files: missing and malformed") {
  TempDir dir;
  CHECK_THROWS_AS(load_config(dir.path / "nope.json"), IoError);
  CHECK_THROWS_AS(load_config(dir.write("bad.json", "{ not json")), ConfigError);
  const RunConfig cfg = load_config(dir.write("ok.json", kTiny.dump()));
  CHECK(cfg.plates.size() == 2);
  CHECK(cfg.base_dir == dir.path);
}

TEST_CASE("g table files resolve relative to the config") {
  TempDir dir;
  dir.write("g.json", "[[1.0, 2.0, 1.5], [1.0, 1.0]]");
  json doc = kTiny;
  doc["g"] = {{"table_file", "g.json"}};
  const RunConfig cfg = load_config(dir.write("cfg.json", doc.dump()));
  const Condenser c = build_condenser(cfg);
  const WeightSpec w = build_weights(cfg, c);
  CHECK(w.g(0)(1) == 2.0);
  CHECK(w.g_min() == 1.0);

  dir.write("g.json", "[[1.0, 2.0], [1.0, 1.0]]");
  CHECK_THROWS_AS(build_weights(cfg, c), ConfigError);
}

TEST_CASE("config round trip and hash") {
  const RunConfig cfg = config_from_json(kTiny);
  const RunConfig again = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(again) == config_to_json(cfg));
  CHECK(config_hash(again) == config_hash(cfg));
  CHECK(config_hash(cfg).size() == 16);

  RunConfig moved = cfg;
  moved.output_dir = "/somewhere/else";
  CHECK(config_hash(moved) == config_hash(cfg));
  RunConfig changed = cfg;
  changed.a[1] = 0.6;
  CHECK(config_hash(changed) != config_hash(cfg));

  RunConfig seeded = cfg;
  apply_seed_override(seeded, 40);
  CHECK(seeded.plates[0].seed == 40);
  CHECK(seeded.plates[1].seed == 41);
  CHECK(seeded.solver.seed == 40);
}

TEST_CASE("solve mode on a tiny instance") {
  const RunReport r = run(config_from_json(kTiny));
  const json& s = r.results.at("solve");
  CHECK(s.at("converged").get<bool>());
  CHECK(s.at("sum_constants").get<double>() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(r.results.at("certificate").at("ladder").get<std::string>() == "bounded");
  CHECK(r.nodes.at("plate_index").size() == 5);
}

TEST_CASE("dual and oracle-compare modes on a tiny instance") {
  RunConfig cfg = config_from_json(kTiny);
  cfg.mode = Mode::dual;
  const RunReport d = run(cfg);
  const double cap = d.results.at("solve").at("capacity").get<double>();
  CHECK(std::abs(d.results.at("dual_direct").at("dual_energy").get<double>() - cap) / cap < 1e-6);
  CHECK(d.results.at("dual_direct").at("warm_start_immediate").get<bool>());

  cfg.mode = Mode::oracle_compare;
  const RunReport o = run(cfg);
  CHECK(o.results.at("oracle").at("name").get<std::string>() == "grid_search");
  CHECK(o.results.at("oracle").at("min_energy_abs_error").get<double>() < 1e-3);
}

TEST_CASE("oracle-compare on the sphere capacitor") {
  RunConfig cfg = config_from_json(kCapacitor);
  cfg.mode = Mode::oracle_compare;
  const RunReport r = run(cfg);
  CHECK(r.results.at("oracle").at("name").get<std::string>() == "sphere_capacitor");
  CHECK(r.results.at("oracle").at("capacity_relative_error").get<double>() < 0.05);
}

TEST_CASE("exhaust mode: regenerated stages must be nested") {
  json doc = kCapacitor;
  doc["plates"][0]["count"] = 100;
  doc["plates"][1]["count"] = 100;
  doc["mode"] = "exhaust";
  doc["nesting"] = "regenerate";
  doc["stages"] = {{50, 50}, {100, 100}};
  try {
    (void)run(config_from_json(doc));
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("stage") != std::string::npos);
  }

  doc["nesting"] = "prefix";
  doc["stages"] = {{25, 25}, {50, 50}, {100, 100}};
  const RunReport ok = run(config_from_json(doc));
  CHECK(ok.results.at("exhaust").at("nondecreasing").get<bool>());
  CHECK(ok.results.at("exhaust").at("stages").size() == 3);
}

TEST_CASE("export: files, round trip and determinism") {
  TempDir dir;
  RunConfig cfg = config_from_json(kTiny);
  const RunReport r = run(cfg);
  const ExportedFiles files = export_report(r, {"json", "csv"}, dir.path);
  REQUIRE(files.paths.size() == 3);
  const std::string stem = "solve_" + r.config_hash;
  CHECK(files.paths[0].filename() == stem + ".json");
  CHECK(files.paths[1].filename() == stem + "_nodes.csv");
  CHECK(files.paths[2].filename() == stem + "_trace.csv");

  const RunReport back = report_from_json(json::parse(slurp(files.paths[0])));
  CHECK(back == r);
  CHECK(config_to_json(config_from_json(back.config)) == back.config);

  std::istringstream csv(slurp(files.paths[1]));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 5);
  CHECK(slurp(files.paths[1]).rfind("plate_index,x,y,z,weight,potential,residual\n", 0) == 0);

  // Everything except timings is reproducible.
  RunReport again = run(cfg);
  again.timings = r.timings;
  CHECK(report_to_json(again).dump() == report_to_json(r).dump());
  CHECK_THROWS_AS(export_report(r, {"xml"}, dir.path), ConfigError);
}

TEST_CASE("output directory precedence") {
  RunConfig cfg = config_from_json(kTiny);
  cfg.base_dir = "/base";
  CHECK(resolve_output_dir(cfg, std::string("/over")) == fs::path("/over"));
  cfg.output_dir = "out";
  CHECK(resolve_output_dir(cfg, std::nullopt) == fs::path("/base/out"));
  cfg.output_dir.reset();
  ::setenv(kOutDirEnv, "/from/env", 1);
  CHECK(resolve_output_dir(cfg, std::nullopt) == fs::path("/from/env"));
  ::unsetenv(kOutDirEnv);
  CHECK(resolve_output_dir(cfg, std::nullopt) == fs::path("."));
}

TEST_CASE("exit codes are distinct per category") {
  const ErrorCategory all[] = {ErrorCategory::configuration, ErrorCategory::geometry,
                               ErrorCategory::nonconvergence, ErrorCategory::io,
                               ErrorCategory::contract, ErrorCategory::numerical,
                               ErrorCategory::degenerate};
  std::set<int> codes;
  for (ErrorCategory c : all) {
    CHECK(exit_code(c) != 0);
    CHECK(exit_code(c) != 1);
    codes.insert(exit_code(c));
  }
  CHECK(codes.size() == 7);
}

TEST_CASE("command-line exit codes") {
  TempDir dir;
  const std::string cli = CONDCAP_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int raw = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(raw);
  };
  const fs::path ok = dir.write("ok.json", kTiny.dump());
  CHECK(status("solve --quiet --config " + ok.string() + " --out " + dir.path.string()) == 0);
  CHECK(fs::exists(dir.path / ("solve_" + config_hash(config_from_json(kTiny)) + ".json")));

  json bad = kTiny;
  bad["a"] = {1.0};
  const fs::path bad_path = dir.write("bad.json", bad.dump());
  CHECK(status("solve --config " + bad_path.string()) ==
        exit_code(ErrorCategory::configuration));
  CHECK(status("solve --config " + (dir.path / "missing.json").string()) ==
        exit_code(ErrorCategory::io));

  json touching = kTiny;
  touching["plates"][1]["generator"]["points"][0] = {0, 0, 0};
  const fs::path geo = dir.write("geo.json", touching.dump());
  CHECK(status("solve --config " + geo.string()) == exit_code(ErrorCategory::geometry));

  CHECK(status("frobnicate") == exit_code(ErrorCategory::configuration));
  CHECK(status("solve") == exit_code(ErrorCategory::configuration));
}
