#include <catch_amalgamated.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "optosqz/config.hpp"

namespace fs = std::filesystem;
using namespace optosqz;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "optosqz_cli_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d.parent_path());
  return d;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OPTOSQZ_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::vector<std::string> data_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

std::size_t count_fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST_CASE("config parsing", "[cli]") {
  const ExperimentConfig d = parse_config(json::object());
  CHECK(d.layout == LayoutKind::const_coupling);
  CHECK(d.schedule.total() == 100);
  CHECK(d.system.n_th == SystemParams{}.n_th);

  json j = {{"layout", "pwl_all"}, {"system", {{"heating_rate", 2.8}, {"n_0", 1e4}}}};
  const ExperimentConfig c = parse_config(j);
  CHECK(c.schedule.total() == 700);
  CHECK_THAT(c.system.heating_rate(), Catch::Matchers::WithinRel(2.8, 1e-12));

  CHECK_THROWS_AS(parse_config(json{{"sytem", json::object()}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"system", {{"kapa", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"layout", "spline"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"seed", "abc"}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"schema_version", "2.0"}}), ConfigError);
  CHECK_NOTHROW(parse_config(json{{"schema_version", "1.3"}}));
  CHECK_THROWS_AS(validate(parse_config(json{{"system", {{"gamma", -1.0}}}})), ConfigError);
  CHECK_THROWS_AS(validate(parse_config(json{{"pulse", {{"coupling", {0.1, 0.2}}}}})), ConfigError);

  json o = json::object();
  apply_override(o, "system.n_0=100");
  apply_override(o, "layout=pwl_all");
  apply_override(o, "sweep.heating_rates=[1,2]");
  CHECK(o["system"]["n_0"] == 100);
  CHECK(o["layout"] == "pwl_all");
  CHECK(parse_config(o).sweep.heating_rates.size() == 2);
  CHECK_THROWS_AS(apply_override(o, "novalue"), ConfigError);

  // resolved configs read back to the same resolved config
  const json r = to_json(c);
  CHECK(to_json(parse_config(r)) == r);
}

TEST_CASE("cli simulate", "[cli]") {
  const fs::path dir = scratch("simulate");
  write_file(dir / "cfg.json", R"({"pulse": {"coupling": 0.1, "tau": 30}})");
  REQUIRE(run_cli("simulate --config " + (dir / "cfg.json").string() + " --out " + (dir / "a").string()) == 0);
  const json rec = read_json_file((dir / "a" / "simulate.json").string());
  CHECK_NOTHROW(check_schema_version(rec));
  CHECK(std::isfinite(rec["s_gen_dB"].get<double>()));
  CHECK(rec["s_gen_dB"].get<double>() > 0.0);
  CHECK(rec["V"].size() == 4);
  CHECK(rec["config"]["pulse"]["tau"] == 30.0);
  CHECK(rec.contains("seed"));

  REQUIRE(run_cli("simulate --override pulse.coupling=0 --override pulse.tau=10 --out " + (dir / "b").string()) == 0);
  CHECK(read_json_file((dir / "b" / "simulate.json").string())["s_gen_dB"].get<double>() == 0.0);

  write_file(dir / "bad.json", R"({"system": {"kappa": 1.0,)");
  CHECK(run_cli("simulate --config " + (dir / "bad.json").string() + " --out " + (dir / "c").string()) == 2);
  CHECK(!fs::exists(dir / "c"));
  write_file(dir / "unknown.json", R"({"pulse": {"coupling": 0.1}, "colour": "blue"})");
  CHECK(run_cli("simulate --config " + (dir / "unknown.json").string() + " --out " + (dir / "d").string()) == 2);
  CHECK(!fs::exists(dir / "d"));
  CHECK(run_cli("simulate --override system.omega_m=-2 --out " + (dir / "e").string()) == 2);
  CHECK(!fs::exists(dir / "e"));
}

TEST_CASE("cli optimize", "[cli]") {
  const fs::path dir = scratch("optimize");
  write_file(dir / "cfg.json", R"({"schedule": {"n_initial": 10, "n_explore": 10, "n_exploit": 5}, "seed": 4})");
  const std::string base = "optimize --config " + (dir / "cfg.json").string();

  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(run_cli(base + " --out " + (dir / "one").string()) == 0);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60.0);
  const auto lines = data_lines(dir / "one" / "optimize.jsonl");
  REQUIRE(lines.size() == 1 + 25 + 1 + 1);
  const json head = json::parse(lines.front());
  CHECK(head["record"] == "header");
  CHECK(head["seed"] == 4);
  CHECK(head["config"]["schedule"]["n_initial"] == 10);
  CHECK(json::parse(lines[1])["record"] == "evaluation");
  CHECK(json::parse(lines[26])["record"] == "run");
  const json summary = read_json_file((dir / "one" / "summary.json").string());
  CHECK(summary["record"] == "summary");
  for (const char* k : {"min_s_gen_dB", "mean_s_gen_dB", "max_s_gen_dB"}) CHECK(summary[k].is_number());
  CHECK(summary["config"] == head["config"]);

  REQUIRE(run_cli(base + " --repeats 3 --out " + (dir / "r1").string()) == 0);
  REQUIRE(run_cli(base + " --repeats 3 --out " + (dir / "r2").string()) == 0);
  CHECK(slurp(dir / "r1" / "summary.json") == slurp(dir / "r2" / "summary.json"));
  CHECK(slurp(dir / "r1" / "optimize.jsonl") == slurp(dir / "r2" / "optimize.jsonl"));
  CHECK(read_json_file((dir / "r1" / "summary.json").string())["runs"] == 3);

  // re-running into the same directory overwrites identically
  REQUIRE(run_cli(base + " --repeats 3 --out " + (dir / "r1").string()) == 0);
  CHECK(slurp(dir / "r1" / "summary.json") == slurp(dir / "r2" / "summary.json"));

  // output directory from the environment
  const std::string env_dir = (dir / "env").string();
  REQUIRE(std::system(("OPTOSQZ_OUT_DIR=" + env_dir + " " + std::string(OPTOSQZ_CLI_PATH) + " " + base +
                       " > /dev/null 2>&1").c_str()) == 0);
  CHECK(fs::exists(dir / "env" / "summary.json"));

  CHECK(run_cli("report " + (dir / "r1" / "summary.json").string() + " " + (dir / "r1" / "optimize.jsonl").string()) == 0);
  write_file(dir / "future.json", R"({"schema_version": "2.0", "record": "summary"})");
  CHECK(run_cli("report " + (dir / "future.json").string()) == 2);
}

TEST_CASE("cli landscape, detect and sweep", "[cli]") {
  const fs::path dir = scratch("analysis");
  REQUIRE(run_cli("landscape --override detect.landscape_n=12 --override system.n_0=100 --out " + dir.string()) == 0);
  const auto rows = data_lines(dir / "landscape.csv");
  REQUIRE(rows.size() == 13);
  for (const auto& r : rows) CHECK(count_fields(r) == 13);
  CHECK(rows.front().rfind("theta_c", 0) == 0);
  CHECK(slurp(dir / "landscape.csv").rfind("# schema_version", 0) == 0);

  REQUIRE(run_cli("detect --override detect.landscape_n=8 --override detect.cooled_n0=100 --out " + dir.string()) == 0);
  const json det = read_json_file((dir / "detect.json").string());
  CHECK(det["thermal"]["trapped"].is_boolean());
  CHECK(det["cooled"]["trapped"] == false);
  CHECK(det["cooled"]["gap"].get<double>() < 1e-6);
  CHECK(data_lines(dir / "landscape_cooled.csv").size() == 9);

  REQUIRE(run_cli("sweep --override sweep.heating_rates=[0.063,50] --override schedule.n_initial=6 "
                  "--override schedule.n_explore=4 --override schedule.n_exploit=2 --repeats 2 --out " +
                  dir.string()) == 0);
  const auto sweep = data_lines(dir / "sweep.csv");
  REQUIRE(sweep.size() == 3);
  CHECK(sweep[0] == "gamma_heat,best_dB,mean_dB");
  CHECK(count_fields(sweep[1]) == 3);
  CHECK(std::stod(sweep[2].substr(sweep[2].find(',') + 1)) <= 1e-9);

  CHECK(run_cli("noisy --override noise.rel_sigma=0.1 --out " + (dir / "n").string()) == 2);
  CHECK(run_cli("frobnicate") == 2);
}
