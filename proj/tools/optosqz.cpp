// optosqz: command-line front end for simulating pulses and running the
// squeezing optimizations. See `optosqz --help`.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "optosqz/config.hpp"
#include "optosqz/harness.hpp"
#include "optosqz/squeezing.hpp"

namespace fs = std::filesystem;
using namespace optosqz;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

constexpr const char* kFooter = R"(Outputs (written to --out, else config output_dir, else $OPTOSQZ_OUT_DIR, else ./optosqz-out):
  simulate   simulate.json        V, lambda_min, S_gen of the config pulse
  optimize   optimize.jsonl       header, one record per evaluation, one per run, summary
             summary.json         summary record (min/mean/max best S_gen)
  noisy      noisy.jsonl, summary.json as for optimize; summary uses noiseless re-evaluations
             reevaluations.csv    columns: draw,s_gen_dB  (when noise.reevaluations > 0)
  sweep      sweep.csv            columns: gamma_heat,best_dB,mean_dB (signed squeezing)
             sweep.jsonl          header and one summary record per heating rate
  detect     detect.json          angles, variance, lambda_min, gap and trapped flag
             landscape_thermal.csv, landscape_cooled.csv
  landscape  landscape.csv        first row: theta_c\theta_m then theta_m grid values;
                                  other rows: theta_c then min over phi of Var X_gen
  report     prints a summary of result files given as arguments

CSV files start with '#' lines holding the resolved config and seed.
Exit codes: 0 ok, 2 configuration error, 3 numeric failure.)";

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

json vec_json(const VecX& x) { return std::vector<double>(x.data(), x.data() + x.size()); }

json profile_json(const Profile& p) {
  if (p.is_piecewise_linear()) return {{"tau", p.tau()}, {"knots", p.as_piecewise_linear().knots}};
  const auto& e = p.as_exponential_sum();
  return {{"tau", p.tau()}, {"coeffs", e.coeffs}, {"rates", e.rates}};
}

json pulse_json(const PulseConfig& p) {
  return {{"tau", p.tau},
          {"gain_proportion", p.gain_proportion},
          {"gain_limit", p.gain_limit},
          {"coupling", profile_json(p.coupling)},
          {"detuning_offset", profile_json(p.detuning_offset)},
          {"fout", profile_json(p.fout)}};
}

json matrix_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json header(const std::string& kind, const ExperimentConfig& c) {
  return {{"schema_version", kSchemaVersion}, {"record", kind}, {"seed", c.seed}, {"config", to_json(c)}};
}

json summary_json(const RepeatSummary& s, const std::vector<RunRecord>& runs, const ExperimentConfig& c, bool noisy) {
  json j = header("summary", c);
  j["runs"] = s.runs;
  j["failed_runs"] = s.failed_runs;
  j["min_s_gen_dB"] = s.min_s_gen;
  j["mean_s_gen_dB"] = s.mean_s_gen;
  j["max_s_gen_dB"] = s.max_s_gen;
  j["mean_signed_dB"] = s.mean_signed_db;
  j["max_signed_dB"] = s.max_signed_db;
  json per_run = json::array();
  for (const auto& r : runs) per_run.push_back(noisy ? r.final_noiseless_s_gen : r.best_s_gen);
  j["best_s_gen_dB_per_run"] = per_run;
  j["histogram"] = {{"lo", s.histogram.lo}, {"hi", s.histogram.hi}, {"counts", s.histogram.counts}};
  const AveragePulse& a = s.average;
  j["average_pulse"] = {{"coupling_mean", a.coupling_mean}, {"coupling_se", a.coupling_se},
                        {"fout_mean", a.fout_mean},         {"fout_se", a.fout_se},
                        {"detuning_mean", a.detuning_mean}, {"detuning_se", a.detuning_se},
                        {"tau_mean", a.tau_mean},           {"tau_se", a.tau_se},
                        {"band_width_se", a.band_width}};
  return j;
}

void write_run_lines(std::ostream& out, const std::vector<RunRecord>& runs) {
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunRecord& r = runs[i];
    for (std::size_t k = 0; k < r.evaluations.size(); ++k) {
      const EvaluationRecord& e = r.evaluations[k];
      json j = {{"record", "evaluation"}, {"run", i},          {"seed", r.seed},         {"index", k},
                {"phase", to_string(e.phase)}, {"x", vec_json(e.x)}, {"objective", e.objective},
                {"lambda_min", e.lambda_min},  {"s_gen_dB", e.s_gen}, {"failed", e.failed}};
      if (e.failed) j["error"] = e.error;
      out << j.dump() << '\n';
    }
    json j = {{"record", "run"},
              {"run", i},
              {"seed", r.seed},
              {"ok", r.ok},
              {"best_lambda_min", r.best_lambda},
              {"best_s_gen_dB", r.best_s_gen},
              {"best_signed_dB", r.best_signed_db},
              {"incumbent_trace", r.incumbent_trace}};
    if (r.ok) {
      j["best_x"] = vec_json(r.best_x);
      j["best_pulse"] = pulse_json(r.best_pulse);
    }
    if (r.rel_sigma > 0.0) {
      j["rel_sigma"] = r.rel_sigma;
      j["final_noiseless_s_gen_dB"] = r.final_noiseless_s_gen;
    }
    if (!r.error.empty()) j["error"] = r.error;
    out << j.dump() << '\n';
  }
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + (dir / name).string() + "'");
  return out;
}

void csv_preamble(std::ostream& out, const ExperimentConfig& c) {
  out << "# schema_version: " << kSchemaVersion << '\n';
  out << "# seed: " << c.seed << '\n';
  out << "# config: " << to_json(c).dump() << '\n';
}

void write_landscape(const fs::path& dir, const std::string& name, const MatX& grid, const ExperimentConfig& c) {
  std::ofstream out = open_out(dir, name);
  csv_preamble(out, c);
  const auto n = grid.rows();
  const double step = std::numbers::pi / static_cast<double>(n);
  out << "theta_c\\theta_m";
  for (Eigen::Index j = 0; j < n; ++j) out << ',' << fmt(j * step);
  out << '\n';
  for (Eigen::Index i = 0; i < n; ++i) {
    out << fmt(i * step);
    for (Eigen::Index j = 0; j < n; ++j) out << ',' << fmt(grid(i, j));
    out << '\n';
  }
}

json detection_json(const DetectionReport& r) {
  const DetectionResult& d = r.result;
  return {{"n_0", r.n_0},
          {"theta_c", d.angles.theta_c},
          {"theta_m", d.angles.theta_m},
          {"phi", d.angles.phi},
          {"variance", d.variance},
          {"lambda_min", d.lambda_min},
          {"gap", d.gap()},
          {"trapped", d.trapped},
          {"evaluations", d.evaluations}};
}

RepeatOptions repeat_options(const ExperimentConfig& c, bool noisy) {
  RepeatOptions o;
  o.harness = build_harness(c);
  o.threads = c.threads;
  o.noisy = noisy;
  o.rel_sigma = noisy ? c.noise.rel_sigma : 0.0;
  return o;
}

int cmd_simulate(const ExperimentConfig& c, const fs::path& dir) {
  const PulseConfig pulse = build_pulse(c);
  const BipartiteCovariance v =
      extract_bipartite(integrate_covariance(c.system, pulse, initial_covariance(c.system), c.integrator));
  const Score s = score_covariance(v);
  json j = header("simulate", c);
  j["pulse"] = pulse_json(pulse);
  j["V"] = matrix_json(v.v);
  j["lambda_min"] = s.lambda_min;
  j["s_gen_dB"] = s.s_gen;
  j["signed_dB"] = s.signed_db;
  open_out(dir, "simulate.json") << j.dump(2) << '\n';
  std::cout << "S_gen = " << fmt(s.s_gen) << " dB (lambda_min = " << fmt(s.lambda_min) << ")\n";
  return kExitOk;
}

int cmd_optimize(const ExperimentConfig& c, const fs::path& dir, bool noisy) {
  const VariableLayout layout(c.layout, c.layout_options);
  const RepeatResult res = repeat_optimize(layout, c.system, c.schedule, c.repeats, c.seed, repeat_options(c, noisy));
  const std::string stem = noisy ? "noisy" : "optimize";
  const json summary = summary_json(res.summary, res.records, c, noisy);
  {
    std::ofstream out = open_out(dir, stem + ".jsonl");
    out << header("header", c).dump() << '\n';
    write_run_lines(out, res.records);
    out << summary.dump() << '\n';
  }
  open_out(dir, "summary.json") << summary.dump(2) << '\n';

  if (noisy && c.noise.reevaluations > 0 && res.summary.runs > res.summary.failed_runs) {
    // incumbent with the best noiseless re-evaluation
    const RunRecord* best = nullptr;
    for (const auto& r : res.records)
      if (r.ok && std::isfinite(r.final_noiseless_s_gen) &&
          (!best || r.final_noiseless_s_gen > best->final_noiseless_s_gen))
        best = &r;
    if (best) {
      const std::vector<double> draws =
          reevaluate_with_noise(c.system, best->best_pulse, c.noise.rel_sigma, c.noise.reevaluations,
                                repeat_seed(c.seed, 1 << 20), c.integrator);
      std::ofstream out = open_out(dir, "reevaluations.csv");
      csv_preamble(out, c);
      out << "# incumbent_run_seed: " << best->seed << '\n';
      out << "# noiseless_s_gen_dB: " << fmt(best->final_noiseless_s_gen) << '\n';
      out << "draw,s_gen_dB\n";
      for (std::size_t i = 0; i < draws.size(); ++i) out << i << ',' << fmt(draws[i]) << '\n';
    }
  }
  std::cout << stem << ": " << res.summary.runs - res.summary.failed_runs << "/" << res.summary.runs
            << " runs ok, best S_gen min/mean/max = " << fmt(res.summary.min_s_gen) << " / "
            << fmt(res.summary.mean_s_gen) << " / " << fmt(res.summary.max_s_gen) << " dB\n";
  return res.summary.failed_runs == res.summary.runs ? kExitNumeric : kExitOk;
}

int cmd_sweep(const ExperimentConfig& c, const fs::path& dir) {
  const VariableLayout layout(c.layout, c.layout_options);
  SweepOptions so;
  so.repeat = repeat_options(c, false);
  so.n_0 = c.sweep.n_0;
  const std::vector<SweepPoint> pts =
      thermal_sweep(layout, c.sweep.heating_rates, c.system, c.schedule, c.repeats, c.seed, so);
  {
    std::ofstream out = open_out(dir, "sweep.csv");
    csv_preamble(out, c);
    out << "gamma_heat,best_dB,mean_dB\n";
    for (const auto& p : pts) out << fmt(p.heating_rate) << ',' << fmt(p.best_db) << ',' << fmt(p.mean_db) << '\n';
  }
  std::ofstream out = open_out(dir, "sweep.jsonl");
  out << header("header", c).dump() << '\n';
  for (const auto& p : pts) {
    json j = summary_json(p.result.summary, p.result.records, c, false);
    j["record"] = "sweep_point";
    j["gamma_heat"] = p.heating_rate;
    j["n_th"] = p.n_th;
    j["n_0"] = p.n_0;
    j["best_dB"] = p.best_db;
    j["mean_dB"] = p.mean_db;
    j.erase("config");
    out << j.dump() << '\n';
  }
  for (const auto& p : pts)
    std::cout << "gamma_heat=" << fmt(p.heating_rate) << " best=" << fmt(p.best_db) << " dB mean=" << fmt(p.mean_db)
              << " dB\n";
  return kExitOk;
}

int cmd_detect(const ExperimentConfig& c, const fs::path& dir) {
  const PulseConfig pulse = build_pulse(c);
  const DetectionStudy st =
      detection_study(c.system, pulse, c.detect.cooled_n0, build_strategy(c), c.detect.landscape_n, c.integrator);
  json j = header("detect", c);
  j["pulse"] = pulse_json(pulse);
  j["thermal"] = detection_json(st.thermal);
  j["cooled"] = detection_json(st.cooled);
  open_out(dir, "detect.json") << j.dump(2) << '\n';
  write_landscape(dir, "landscape_thermal.csv", st.thermal.landscape, c);
  write_landscape(dir, "landscape_cooled.csv", st.cooled.landscape, c);
  for (const auto* r : {&st.thermal, &st.cooled})
    std::cout << "n_0=" << fmt(r->n_0) << " variance=" << fmt(r->result.variance)
              << " lambda_min=" << fmt(r->result.lambda_min) << (r->result.trapped ? " trapped" : " found") << '\n';
  return kExitOk;
}

int cmd_landscape(const ExperimentConfig& c, const fs::path& dir) {
  const PulseConfig pulse = build_pulse(c);
  const BipartiteCovariance v =
      extract_bipartite(integrate_covariance(c.system, pulse, initial_covariance(c.system), c.integrator));
  write_landscape(dir, "landscape.csv", angle_landscape(v, c.detect.landscape_n), c);
  std::cout << "wrote " << (dir / "landscape.csv").string() << '\n';
  return kExitOk;
}

void report_record(const json& j, const std::string& where) {
  check_schema_version(j);
  const std::string kind = j.value("record", "");
  if (kind == "summary") {
    std::cout << where << ": " << j.value("runs", 0) << " runs, best S_gen min/mean/max = " << j["min_s_gen_dB"] << " / "
              << j["mean_s_gen_dB"] << " / " << j["max_s_gen_dB"] << " dB\n";
  } else if (kind == "simulate") {
    std::cout << where << ": S_gen = " << j["s_gen_dB"] << " dB, lambda_min = " << j["lambda_min"] << '\n';
  } else if (kind == "detect") {
    for (const char* k : {"thermal", "cooled"})
      std::cout << where << ": " << k << " n_0=" << j[k]["n_0"] << " gap=" << j[k]["gap"]
                << " trapped=" << j[k]["trapped"] << '\n';
  }
}

int cmd_report(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("report needs at least one result file");
  for (const auto& path : paths) {
    if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
      std::ifstream in(path);
      if (!in) throw ConfigError("cannot read '" + path + "'");
      std::string line;
      json version;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ConfigError("'" + path + "' has a malformed line");
        if (j.contains("schema_version")) version = j;
        else if (version.is_null()) throw ConfigError("'" + path + "' has no header record");
        if (j.contains("schema_version")) report_record(j, path);
      }
    } else {
      report_record(read_json_file(path), path);
    }
  }
  return kExitOk;
}

fs::path resolve_out_dir(const std::string& flag, const ExperimentConfig& c) {
  if (!flag.empty()) return flag;
  if (!c.output_dir.empty()) return c.output_dir;
  if (const char* env = std::getenv("OPTOSQZ_OUT_DIR"); env && *env) return env;
  return "optosqz-out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulsed two-mode optomechanical squeezing: simulation and Bayesian pulse optimization"};
  app.footer(kFooter);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> repeats;
  std::vector<std::string> report_paths;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "base seed (overrides config)");
    sub->add_option("--repeats", repeats, "number of seeded repeats (overrides config)");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--override", overrides, "config override key=value, dotted keys (repeatable)");
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "integrate one pulse and score the final state"},
      {"optimize", "Bayesian optimization of the pulse, optionally repeated"},
      {"sweep", "repeated optimizations over heating rates"},
      {"noisy", "optimization with control noise on the coupling knots"},
      {"detect", "detection-angle search on the state of a pulse"},
      {"landscape", "detection-angle landscape of the state of a pulse"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    subs.push_back(app.add_subcommand(name, help));
    common(subs.back());
  }
  CLI::App* report = app.add_subcommand("report", "summarize result files");
  report->add_option("files", report_paths, "result files (.json or .jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (report->parsed()) return cmd_report(report_paths);

    json raw = config_path.empty() ? json::object() : read_json_file(config_path);
    if (!raw.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& o : overrides) apply_override(raw, o);
    if (seed) raw["seed"] = *seed;
    if (repeats) raw["repeats"] = *repeats;
    const ExperimentConfig cfg = parse_config(raw);
    validate(cfg);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if ((cmd == "simulate" || cmd == "detect" || cmd == "landscape") && cfg.pulse) build_pulse(cfg).validate();
    if (cmd == "noisy" && cfg.noise.rel_sigma > 0.0 && !VariableLayout(cfg.layout, cfg.layout_options).has_coupling_knots())
      throw ConfigError("control noise needs a layout with coupling knots");

    const fs::path dir = resolve_out_dir(out_dir, cfg);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());

    if (cmd == "simulate") return cmd_simulate(cfg, dir);
    if (cmd == "optimize") return cmd_optimize(cfg, dir, false);
    if (cmd == "noisy") return cmd_optimize(cfg, dir, true);
    if (cmd == "sweep") return cmd_sweep(cfg, dir);
    if (cmd == "detect") return cmd_detect(cfg, dir);
    if (cmd == "landscape") return cmd_landscape(cfg, dir);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
}
