#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>

#include "scenefit/io.hpp"
#include "scenefit/scenegen.hpp"
#include "scenefit/solver.hpp"

namespace scenefit {

/// Every tunable of a run. Defaults are the published parameter values.
struct RunConfig {
  EstimationConfig estimation;
  ObservationConfig observation;
  PerturbationConfig perturbation;
  double shrink_margin = 1e-5;
  double shrink_precision = 1e-4;
  std::uint64_t seed = 0;
  int threads = 1;

  EstimationConfig estimation_config() const {
    EstimationConfig c = estimation;
    c.physics.threads = threads;
    return c;
  }
};

namespace detail {

/// Binds JSON keys to fields so serialization, parsing and env overrides share one table.
struct ConfigVisitor {
  std::function<void(const std::string&, double&)> real;
  std::function<void(const std::string&, int&)> integer;
  std::function<void(const std::string&, bool&)> flag;
  std::function<void(const std::string&, Vec3&)> vec;
  std::function<void(const std::string&, std::uint64_t&)> seed;
};

inline void visit_config(RunConfig& c, const ConfigVisitor& v) {
  auto& w = c.estimation.weights;
  v.real("weights.hull_vertex", w.hull_vertex);
  v.real("weights.cloud_point", w.cloud_point);
  v.real("weights.prior_vertex", w.prior_vertex);

  auto& p = c.estimation.physics;
  v.real("physics.mu", p.barrier.mu);
  v.real("physics.eta", p.eta);
  v.real("physics.cone_epsilon", p.cone_epsilon);
  v.real("physics.inner_tolerance", p.barrier.inner_tolerance);
  v.integer("physics.max_inner_iterations", p.barrier.max_inner_iterations);
  v.flag("physics.clamped", p.barrier.clamped);
  v.real("physics.clamp_distance", p.barrier.clamp_distance);
  v.real("physics.fraction_to_boundary", p.barrier.fraction_to_boundary);

  auto& o = c.estimation.options;
  v.flag("options.optimize_shape", o.optimize_shape);
  v.flag("options.friction", o.friction);
  v.flag("options.aggregation", o.aggregation);

  auto& a = c.estimation.alm;
  v.real("alm.rho_eq", a.rho_eq);
  v.real("alm.rho_ineq", a.rho_ineq);
  v.real("alm.gamma_eq", a.gamma_eq);
  v.real("alm.gamma_ineq", a.gamma_ineq);
  v.real("alm.beta_eq", a.beta_eq);
  v.real("alm.beta_ineq", a.beta_ineq);
  v.real("alm.eps_r", a.eps_r);
  v.real("alm.eps_g", a.eps_g);
  v.real("alm.eps_c", a.eps_c);
  v.integer("alm.max_outer", a.max_outer);
  v.integer("alm.max_lm", a.max_lm);
  v.integer("alm.stall_window", a.stall_window);
  v.real("alm.stall_fraction", a.stall_fraction);
  v.real("alm.kkt_fraction", a.kkt_fraction);
  v.integer("alm.kkt_patience", a.kkt_patience);
  v.real("alm.damping", a.damping);
  v.real("alm.damping_up", a.damping_up);
  v.real("alm.damping_down", a.damping_down);
  v.real("alm.damping_max", a.damping_max);
  v.real("alm.damping_floor", a.damping_floor);

  auto& ob = c.observation;
  v.vec("observation.view", ob.view);
  v.integer("observation.points_per_body", ob.points_per_body);
  v.real("observation.noise", ob.noise);
  v.integer("observation.prior_subdivisions", ob.prior_subdivisions);
  v.real("observation.prior_jitter", ob.prior_jitter);
  v.flag("observation.full_visibility", ob.full_visibility);

  auto& pe = c.perturbation;
  v.real("perturbation.rotation_sigma", pe.rotation_sigma);
  v.real("perturbation.translation_sigma", pe.translation_sigma);
  v.real("perturbation.vertex_sigma", pe.vertex_sigma);
  v.real("perturbation.lift", pe.lift);

  v.real("shrink.margin", c.shrink_margin);
  v.real("shrink.precision", c.shrink_precision);
  v.seed("seed", c.seed);
  v.integer("threads", c.threads);
}

inline Json::json_pointer config_pointer(const std::string& dotted) {
  std::string ptr = "/" + dotted;
  for (auto& ch : ptr)
    if (ch == '.') ch = '/';
  return Json::json_pointer(ptr);
}

inline std::string env_name(const std::string& dotted) {
  std::string name = "SCENEFIT_";
  for (char ch : dotted) name += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return name;
}

}  // namespace detail

inline Json to_json(const RunConfig& cfg) {
  RunConfig c = cfg;
  Json j = Json::object();
  detail::ConfigVisitor v;
  v.real = [&](const std::string& k, double& x) { j[detail::config_pointer(k)] = x; };
  v.integer = [&](const std::string& k, int& x) { j[detail::config_pointer(k)] = x; };
  v.flag = [&](const std::string& k, bool& x) { j[detail::config_pointer(k)] = x; };
  v.vec = [&](const std::string& k, Vec3& x) { j[detail::config_pointer(k)] = to_json(x); };
  v.seed = [&](const std::string& k, std::uint64_t& x) { j[detail::config_pointer(k)] = x; };
  detail::visit_config(c, v);
  return j;
}

namespace detail {

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  RunConfig scratch;
  ConfigVisitor v;
  auto add = [&](const std::string& k) { keys.push_back(k); };
  v.real = [&](const std::string& k, double&) { add(k); };
  v.integer = [&](const std::string& k, int&) { add(k); };
  v.flag = [&](const std::string& k, bool&) { add(k); };
  v.vec = [&](const std::string& k, Vec3&) { add(k); };
  v.seed = [&](const std::string& k, std::uint64_t&) { add(k); };
  visit_config(scratch, v);
  return keys;
}

}  // namespace detail

/// Applies the fields present in j on top of cfg. Unknown keys are rejected.
inline void apply_json(RunConfig& cfg, const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidInput, "config must be a JSON object");
  const auto keys = detail::config_keys();
  const Json flat = j.flatten();
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    const std::string& leaf = it.key();
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const std::string& k) {
      const std::string p = detail::config_pointer(k).to_string();
      return leaf == p || leaf.rfind(p + "/", 0) == 0;
    });
    if (!known) throw Error(ErrorCode::kInvalidInput, "unknown config field '" + leaf + "'");
  }

  auto lookup = [&](const std::string& k) -> const Json* {
    const auto ptr = detail::config_pointer(k);
    return j.contains(ptr) ? &j.at(ptr) : nullptr;
  };
  auto fail = [](const std::string& k, const char* what) {
    throw Error(ErrorCode::kInvalidInput, "config field '" + k + "' must be " + what);
  };
  detail::ConfigVisitor v;
  v.real = [&](const std::string& k, double& x) {
    if (const auto* e = lookup(k)) {
      if (!e->is_number()) fail(k, "a number");
      x = e->get<double>();
    }
  };
  v.integer = [&](const std::string& k, int& x) {
    if (const auto* e = lookup(k)) {
      if (!e->is_number_integer()) fail(k, "an integer");
      x = e->get<int>();
    }
  };
  v.flag = [&](const std::string& k, bool& x) {
    if (const auto* e = lookup(k)) {
      if (!e->is_boolean()) fail(k, "a boolean");
      x = e->get<bool>();
    }
  };
  v.vec = [&](const std::string& k, Vec3& x) {
    if (const auto* e = lookup(k)) x = vec3_from_json(*e);
  };
  v.seed = [&](const std::string& k, std::uint64_t& x) {
    if (const auto* e = lookup(k)) {
      if (!e->is_number_unsigned()) fail(k, "a non-negative integer");
      x = e->get<std::uint64_t>();
    }
  };
  detail::visit_config(cfg, v);
}

/// SCENEFIT_<SECTION>_<FIELD> overrides, e.g. SCENEFIT_ALM_RHO_EQ=0.02 or
/// SCENEFIT_OBSERVATION_VIEW=[0,0,-1]. Values are parsed as JSON.
inline void apply_env(RunConfig& cfg, const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  Json overrides = Json::object();
  for (const auto& k : detail::config_keys()) {
    const std::string name = detail::env_name(k);
    const char* raw = getenv_fn(name.c_str());
    if (!raw) continue;
    try {
      overrides[detail::config_pointer(k)] = Json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::kInvalidInput, name + " is not a valid JSON value: '" + raw + "'");
    }
  }
  if (!overrides.empty()) apply_json(cfg, overrides);
}

/// Documented environment variable names, one per config field.
inline std::vector<std::string> config_env_names() {
  std::vector<std::string> names;
  for (const auto& k : detail::config_keys()) names.push_back(detail::env_name(k));
  return names;
}

/// Defaults, then the optional config file, then environment overrides.
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                 const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
  RunConfig cfg;
  if (file) apply_json(cfg, read_json(*file));
  apply_env(cfg, getenv_fn);
  if (cfg.threads < 1) throw Error(ErrorCode::kInvalidInput, "threads must be >= 1");
  return cfg;
}

}  // namespace scenefit
