#pragma once

// Experiment configuration for the command-line front end: JSON parsing with
// strict key checking, dotted-path overrides and conversion to library types.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "optosqz/errors.hpp"
#include "optosqz/harness.hpp"
#include "optosqz/pulses.hpp"
#include "optosqz/rwa.hpp"
#include "optosqz/squeezing.hpp"
#include "optosqz/system.hpp"

namespace optosqz {

using json = nlohmann::json;

inline constexpr const char* kSchemaVersion = "1.0";
inline constexpr int kSchemaMajor = 1;

/// Throws ConfigError unless the record's schema_version has a supported major version.
inline void check_schema_version(const json& record) {
  if (!record.is_object() || !record.contains("schema_version") || !record["schema_version"].is_string())
    throw ConfigError("record has no schema_version");
  const std::string v = record["schema_version"].get<std::string>();
  int major = -1;
  try {
    std::size_t used = 0;
    major = std::stoi(v, &used);
    if (used == 0) major = -1;
  } catch (const std::exception&) {
    major = -1;
  }
  if (major != kSchemaMajor) throw ConfigError("unsupported schema_version '" + v + "'");
}

/// Explicit pulse given in a config: knot arrays sharing tau. A single value is a constant.
struct PulseSpec {
  double tau = 30.0;
  std::vector<double> coupling{0.1};
  std::vector<double> detuning_offset{0.0};
  /// Empty: the optimal detection profile of a constant pulse.
  std::vector<double> fout;
  double gain_proportion = 1.0;
  double gain_limit = 50.0;
};

struct SweepSpec {
  std::vector<double> heating_rates{0.063, 0.3, 1.0, 2.8, 10.0, 50.0};
  double n_0 = 100.0;
};

struct NoiseSpec {
  double rel_sigma = 0.1;
  /// Re-evaluations of the best incumbent with fresh noise; 0 skips the study.
  int reevaluations = 0;
};

struct DetectSpec {
  std::string strategy = "grid_refine";
  int grid_n = 32;
  double cooled_n0 = 100.0;
  int landscape_n = 64;
};

struct ExperimentConfig {
  SystemParams system;
  LayoutKind layout = LayoutKind::const_coupling;
  LayoutOptions layout_options;
  PhaseSchedule schedule = default_schedule(LayoutKind::const_coupling);
  std::uint64_t seed = 1;
  int repeats = 1;
  int threads = 0;
  NoiseSpec noise;
  SweepSpec sweep;
  DetectSpec detect;
  std::optional<PulseSpec> pulse;
  IntegratorOptions integrator;
  BoConfig bo;
  std::string output_dir;
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + (where.empty() ? std::string(key) : where + "." + key) + "'");
  }
}

inline std::vector<double> read_knots(const json& j, const char* key, const std::string& where) {
  std::vector<double> v;
  const json& x = j.at(key);
  if (x.is_number()) return {x.get<double>()};
  read(j, key, v, where);
  if (v.empty()) throw ConfigError(where + "." + key + " must not be empty");
  return v;
}

inline Profile knots_to_profile(std::vector<double> v, double tau) {
  if (v.size() == 1) v.push_back(v.front());
  return Profile::piecewise_linear(std::move(v), tau);
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::read;
  detail::reject_unknown(j, "", {"schema_version", "system", "layout", "layout_options", "schedule", "seed", "repeats",
                                 "threads", "noise", "sweep", "detect", "pulse", "integrator", "bo", "output_dir"});
  if (j.contains("schema_version")) check_schema_version(j);
  ExperimentConfig c;

  if (j.contains("system")) {
    const json& s = j["system"];
    detail::reject_unknown(s, "system", {"kappa", "gamma", "omega_m", "n_th", "n_0", "heating_rate"});
    read(s, "kappa", c.system.kappa, "system");
    read(s, "gamma", c.system.gamma, "system");
    read(s, "omega_m", c.system.omega_m, "system");
    read(s, "n_th", c.system.n_th, "system");
    read(s, "n_0", c.system.n_0, "system");
    if (s.contains("heating_rate")) {
      if (s.contains("n_th")) throw ConfigError("give either system.n_th or system.heating_rate, not both");
      double h = 0.0;
      read(s, "heating_rate", h, "system");
      c.system = c.system.with_heating_rate(h);
    }
  }

  if (j.contains("layout")) {
    std::string name;
    read(j, "layout", name, "");
    try {
      c.layout = layout_from_string(name);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
  c.schedule = default_schedule(c.layout);

  if (j.contains("layout_options")) {
    const json& o = j["layout_options"];
    LayoutOptions& lo = c.layout_options;
    detail::reject_unknown(o, "layout_options",
                           {"knots", "g_min", "g_max", "p_min", "p_max", "tau_min", "tau_max", "gain_limit", "fout_min",
                            "fout_max", "detuning_fraction", "fixed_g", "fixed_tau"});
    const std::string w = "layout_options";
    read(o, "knots", lo.knots, w);
    read(o, "g_min", lo.g_min, w);
    read(o, "g_max", lo.g_max, w);
    read(o, "p_min", lo.p_min, w);
    read(o, "p_max", lo.p_max, w);
    read(o, "tau_min", lo.tau_min, w);
    read(o, "tau_max", lo.tau_max, w);
    read(o, "gain_limit", lo.gain_limit, w);
    read(o, "fout_min", lo.fout_min, w);
    read(o, "fout_max", lo.fout_max, w);
    read(o, "detuning_fraction", lo.detuning_fraction, w);
    read(o, "fixed_g", lo.fixed_g, w);
    read(o, "fixed_tau", lo.fixed_tau, w);
  }

  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    detail::reject_unknown(s, "schedule", {"n_initial", "n_explore", "n_exploit"});
    read(s, "n_initial", c.schedule.n_initial, "schedule");
    read(s, "n_explore", c.schedule.n_explore, "schedule");
    read(s, "n_exploit", c.schedule.n_exploit, "schedule");
  }
  read(j, "seed", c.seed, "");
  read(j, "repeats", c.repeats, "");
  read(j, "threads", c.threads, "");
  read(j, "output_dir", c.output_dir, "");

  if (j.contains("noise")) {
    const json& n = j["noise"];
    detail::reject_unknown(n, "noise", {"rel_sigma", "reevaluations"});
    read(n, "rel_sigma", c.noise.rel_sigma, "noise");
    read(n, "reevaluations", c.noise.reevaluations, "noise");
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    detail::reject_unknown(s, "sweep", {"heating_rates", "n_0"});
    read(s, "heating_rates", c.sweep.heating_rates, "sweep");
    read(s, "n_0", c.sweep.n_0, "sweep");
  }
  if (j.contains("detect")) {
    const json& d = j["detect"];
    detail::reject_unknown(d, "detect", {"strategy", "grid_n", "cooled_n0", "landscape_n"});
    read(d, "strategy", c.detect.strategy, "detect");
    read(d, "grid_n", c.detect.grid_n, "detect");
    read(d, "cooled_n0", c.detect.cooled_n0, "detect");
    read(d, "landscape_n", c.detect.landscape_n, "detect");
  }
  if (j.contains("pulse")) {
    const json& p = j["pulse"];
    detail::reject_unknown(p, "pulse", {"tau", "coupling", "detuning_offset", "fout", "gain_proportion", "gain_limit"});
    PulseSpec ps;
    read(p, "tau", ps.tau, "pulse");
    if (p.contains("coupling")) ps.coupling = detail::read_knots(p, "coupling", "pulse");
    if (p.contains("detuning_offset")) ps.detuning_offset = detail::read_knots(p, "detuning_offset", "pulse");
    if (p.contains("fout") && !(p["fout"].is_string() && p["fout"] == "optimal"))
      ps.fout = detail::read_knots(p, "fout", "pulse");
    read(p, "gain_proportion", ps.gain_proportion, "pulse");
    read(p, "gain_limit", ps.gain_limit, "pulse");
    c.pulse = ps;
  }
  if (j.contains("integrator")) {
    const json& g = j["integrator"];
    detail::reject_unknown(g, "integrator", {"atol", "rtol", "frame"});
    read(g, "atol", c.integrator.atol, "integrator");
    read(g, "rtol", c.integrator.rtol, "integrator");
    if (g.contains("frame")) {
      std::string f;
      read(g, "frame", f, "integrator");
      if (f == "demodulated")
        c.integrator.frame = OutputFrame::demodulated;
      else if (f == "drive")
        c.integrator.frame = OutputFrame::drive;
      else
        throw ConfigError("integrator.frame must be 'demodulated' or 'drive'");
    }
  }
  if (j.contains("bo")) {
    const json& b = j["bo"];
    detail::reject_unknown(b, "bo", {"lcb_beta", "trust_region", "pool_size", "perturbations", "refine_evals",
                                     "gp_restarts", "failure_penalty_sd"});
    read(b, "lcb_beta", c.bo.lcb_beta, "bo");
    read(b, "trust_region", c.bo.trust_region, "bo");
    read(b, "pool_size", c.bo.proposal.pool_size, "bo");
    read(b, "perturbations", c.bo.proposal.perturbations, "bo");
    read(b, "refine_evals", c.bo.proposal.refine_evals, "bo");
    read(b, "gp_restarts", c.bo.gp.restarts, "bo");
    read(b, "failure_penalty_sd", c.bo.failure_penalty_sd, "bo");
  }
  return c;
}

/// Checks everything that can be checked before a run starts.
inline void validate(const ExperimentConfig& c) {
  try {
    c.system.validate();
    c.schedule.validate();
    const VariableLayout layout(c.layout, c.layout_options);
    const Bounds b = layout.bounds(c.system);
    b.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const LayoutOptions& o = c.layout_options;
  if (!(o.tau_min > 0.0 && o.tau_min <= o.tau_max)) throw ConfigError("layout_options: need 0 < tau_min <= tau_max");
  if (!(o.p_min > 0.0 && o.p_max <= 1.0)) throw ConfigError("layout_options: gain proportions must lie in (0, 1]");
  if (!(o.g_min >= 0.0)) throw ConfigError("layout_options: g_min must be >= 0");
  if (!(o.gain_limit > 1.0)) throw ConfigError("layout_options: gain_limit must be > 1");
  if (c.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (c.threads < 0) throw ConfigError("threads must be >= 0");
  if (!(c.noise.rel_sigma >= 0.0)) throw ConfigError("noise.rel_sigma must be >= 0");
  if (c.noise.reevaluations < 0) throw ConfigError("noise.reevaluations must be >= 0");
  if (c.sweep.heating_rates.empty()) throw ConfigError("sweep.heating_rates must not be empty");
  for (double h : c.sweep.heating_rates)
    if (!(h > 0.0)) throw ConfigError("sweep.heating_rates must be positive");
  if (!(c.sweep.n_0 >= 0.0)) throw ConfigError("sweep.n_0 must be >= 0");
  if (c.detect.strategy != "grid_refine" && c.detect.strategy != "bayesian")
    throw ConfigError("detect.strategy must be 'grid_refine' or 'bayesian'");
  if (c.detect.grid_n < 2 || c.detect.landscape_n < 2) throw ConfigError("detect grids need at least 2 points");
  if (!(c.detect.cooled_n0 >= 0.0)) throw ConfigError("detect.cooled_n0 must be >= 0");
  if (!(c.integrator.atol > 0.0 && c.integrator.rtol > 0.0)) throw ConfigError("integrator tolerances must be > 0");
  if (c.pulse) {
    const PulseSpec& p = *c.pulse;
    if (!(p.tau > 0.0)) throw ConfigError("pulse.tau must be > 0");
    for (double g : p.coupling)
      if (!(g >= 0.0)) throw ConfigError("pulse.coupling must be >= 0");
    if (!(p.gain_proportion > 0.0 && p.gain_proportion <= 1.0)) throw ConfigError("pulse.gain_proportion must lie in (0, 1]");
    if (p.fout.empty()) {
      const bool constant = std::all_of(p.coupling.begin(), p.coupling.end(), [&](double g) { return g == p.coupling[0]; });
      const bool resonant = std::all_of(p.detuning_offset.begin(), p.detuning_offset.end(), [](double d) { return d == 0.0; });
      if (!constant || !resonant)
        throw ConfigError("pulse.fout 'optimal' needs constant coupling and zero detuning offset");
    }
  }
}

/// Pulse of the config; without one, a top-hat with the layout's fixed coupling and duration.
inline PulseConfig build_pulse(const ExperimentConfig& c) {
  PulseSpec ps;
  if (c.pulse) {
    ps = *c.pulse;
  } else {
    ps.tau = c.layout_options.fixed_tau;
    ps.coupling = {c.layout_options.fixed_g};
  }
  PulseConfig pulse;
  pulse.tau = ps.tau;
  pulse.coupling = detail::knots_to_profile(ps.coupling, ps.tau);
  pulse.detuning_offset = detail::knots_to_profile(ps.detuning_offset, ps.tau);
  pulse.fout = ps.fout.empty() ? optimal_fout_constant(c.system, ps.coupling.front(), ps.tau)
                               : normalize_fout(detail::knots_to_profile(ps.fout, ps.tau));
  pulse.gain_proportion = ps.gain_proportion;
  pulse.gain_limit = ps.gain_limit;
  return pulse;
}

inline DetectionStrategy build_strategy(const ExperimentConfig& c) {
  DetectionStrategy s;
  s.kind = c.detect.strategy == "bayesian" ? DetectionStrategy::Kind::bayesian : DetectionStrategy::Kind::grid_refine;
  s.grid_n = c.detect.grid_n;
  s.seed = c.seed;
  return s;
}

inline HarnessOptions build_harness(const ExperimentConfig& c) {
  HarnessOptions h;
  h.bo = c.bo;
  h.integrator = c.integrator;
  return h;
}

/// Fully resolved config, the form embedded in every output.
inline json to_json(const ExperimentConfig& c) {
  const LayoutOptions& o = c.layout_options;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["system"] = {{"kappa", c.system.kappa}, {"gamma", c.system.gamma}, {"omega_m", c.system.omega_m},
                 {"n_th", c.system.n_th},   {"n_0", c.system.n_0}};
  j["layout"] = to_string(c.layout);
  j["layout_options"] = {{"knots", o.knots},           {"g_min", o.g_min},
                         {"g_max", o.g_max},           {"p_min", o.p_min},
                         {"p_max", o.p_max},           {"tau_min", o.tau_min},
                         {"tau_max", o.tau_max},       {"gain_limit", o.gain_limit},
                         {"fout_min", o.fout_min},     {"fout_max", o.fout_max},
                         {"detuning_fraction", o.detuning_fraction}, {"fixed_g", o.fixed_g},
                         {"fixed_tau", o.fixed_tau}};
  j["schedule"] = {{"n_initial", c.schedule.n_initial}, {"n_explore", c.schedule.n_explore},
                   {"n_exploit", c.schedule.n_exploit}};
  j["seed"] = c.seed;
  j["repeats"] = c.repeats;
  j["threads"] = c.threads;
  j["noise"] = {{"rel_sigma", c.noise.rel_sigma}, {"reevaluations", c.noise.reevaluations}};
  j["sweep"] = {{"heating_rates", c.sweep.heating_rates}, {"n_0", c.sweep.n_0}};
  j["detect"] = {{"strategy", c.detect.strategy}, {"grid_n", c.detect.grid_n}, {"cooled_n0", c.detect.cooled_n0},
                 {"landscape_n", c.detect.landscape_n}};
  if (c.pulse) {
    json p = {{"tau", c.pulse->tau},
              {"coupling", c.pulse->coupling},
              {"detuning_offset", c.pulse->detuning_offset},
              {"gain_proportion", c.pulse->gain_proportion},
              {"gain_limit", c.pulse->gain_limit}};
    p["fout"] = c.pulse->fout.empty() ? json("optimal") : json(c.pulse->fout);
    j["pulse"] = p;
  }
  j["integrator"] = {{"atol", c.integrator.atol},
                     {"rtol", c.integrator.rtol},
                     {"frame", c.integrator.frame == OutputFrame::drive ? "drive" : "demodulated"}};
  j["bo"] = {{"lcb_beta", c.bo.lcb_beta},
             {"trust_region", c.bo.trust_region},
             {"pool_size", c.bo.proposal.pool_size},
             {"perturbations", c.bo.proposal.perturbations},
             {"refine_evals", c.bo.proposal.refine_evals},
             {"gp_restarts", c.bo.gp.restarts},
             {"failure_penalty_sd", c.bo.failure_penalty_sd}};
  j["output_dir"] = c.output_dir;
  return j;
}

/// Sets a dotted key, e.g. "system.n_0=100". The value is read as JSON when it
/// parses, otherwise as a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("'" + path + "' is not valid JSON");
  return j;
}

}  // namespace optosqz
