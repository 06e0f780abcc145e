#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scenefit/config.hpp"
#include "scenefit/io.hpp"
#include "scenefit/scenegen.hpp"
#include "scenefit/solver.hpp"
#include "scenefit/validate.hpp"

namespace scenefit {

struct GeneratedScene {
  std::string name;
  GroundTruthScene truth;
  Observation observation;
  std::optional<SceneModel> initial;  // only when the perturbation is nonzero
};

inline bool perturbed(const PerturbationConfig& p) {
  return p.rotation_sigma != 0.0 || p.translation_sigma != 0.0 || p.vertex_sigma != 0.0 || p.lift != 0.0;
}

/// The observation uses seed, the perturbation seed + 1.
inline GeneratedScene generate(const std::string& name, const RunConfig& cfg) {
  GeneratedScene g;
  g.name = name;
  g.truth = builtin_scene(name, cfg.estimation_config().physics);
  g.observation = synthesize_observation(g.truth.scene, cfg.observation, cfg.seed);
  if (perturbed(cfg.perturbation)) g.initial = perturb_initial(g.truth.scene, cfg.perturbation, cfg.seed + 1);
  return g;
}

inline int hull_count(const SceneModel& scene) {
  int n = 0;
  for (const auto& b : scene.bodies) n += static_cast<int>(b.hulls.size());
  return n;
}

/// scene.json, observation.json, one prior OBJ per observed body and, when
/// perturbed, initial.json.
inline std::vector<std::filesystem::path> write_generated(const std::filesystem::path& dir, const GeneratedScene& g) {
  std::vector<std::filesystem::path> written;
  const auto& scene = g.truth.scene;
  std::vector<std::string> prior_files(scene.bodies.size());
  for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
    if (i >= g.observation.priors.size() || g.observation.priors[i].vertices.empty()) continue;
    prior_files[i] = "prior_" + scene.bodies[i].name + ".obj";
    write_obj(dir / prior_files[i], {{"prior mesh of " + scene.bodies[i].name}, g.observation.priors[i]});
    written.push_back(dir / prior_files[i]);
  }
  write_json(dir / "scene.json", to_json(scene));
  written.push_back(dir / "scene.json");
  write_json(dir / "observation.json", observation_to_json(g.observation, scene, prior_files));
  written.push_back(dir / "observation.json");
  if (g.initial) {
    write_json(dir / "initial.json", to_json(*g.initial));
    written.push_back(dir / "initial.json");
  }
  return written;
}

struct EstimateRun {
  EstimateOutput output;
  std::vector<OuterRecord> trace;
  ValidationReport report;

  bool feasible(const RunConfig& cfg) const { return output.eq_norm <= cfg.estimation.alm.eps_c; }
};

/// Shrinks the initialization out of contact unless told not to, runs the
/// solver and validates the result from scratch.
inline EstimateRun run_estimate(const SceneModel& initial, const Observation& obs, const RunConfig& cfg, bool shrink,
                                const SceneModel* truth = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  SceneModel start_scene = initial;
  std::vector<double> factors(initial.bodies.size(), 1.0);
  if (shrink) {
    auto sr = resolve_penetration(initial, cfg.shrink_margin, cfg.shrink_precision);
    start_scene = std::move(sr.scene);
    factors = std::move(sr.factors);
  }
  const EstimationConfig ec = cfg.estimation_config();
  const AlmResult res = alm_optimize(start_scene, obs, ec);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EstimateRun run;
  run.output = summarize(res, ec.options, seconds);
  run.output.shrink_factors = std::move(factors);
  run.trace = res.trace;
  run.report = validate(run.output, ec.physics, ec.alm.eps_c, truth);
  return run;
}

/// result.json, trace.jsonl, report.json and one OBJ per body under meshes/.
inline void write_estimate(const std::filesystem::path& dir, const EstimateRun& run, const RunConfig& cfg) {
  write_json(dir / "result.json", to_json(run.output, cfg));
  write_text(dir / "trace.jsonl", to_jsonl(run.trace));
  write_json(dir / "report.json", to_json(run.report));
  for (const auto& b : run.output.scene.bodies)
    write_obj(dir / "meshes" / (b.name + ".obj"), {{b.name}, body_hull_meshes(b)});
}

}  // namespace scenefit
