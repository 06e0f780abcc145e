#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "scenefit/bench.hpp"
#include "scenefit/config.hpp"
#include "scenefit/gradcheck.hpp"
#include "scenefit/pipeline.hpp"
#include "scenefit/validate.hpp"

namespace fs = std::filesystem;
using namespace scenefit;

namespace {

// Exit codes shared by every command.
constexpr int kOk = 0;
constexpr int kCheckFailed = 1;  // ran to completion, result outside thresholds
constexpr int kUsage = 2;
constexpr int kRuntime = 3;

struct Common {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> aggregation;
  bool no_shrink = false;
  fs::path out_dir = ".";

  RunConfig load() const {
    RunConfig cfg = load_run_config(config);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (aggregation) cfg.estimation.options.aggregation = *aggregation == "on";
    if (cfg.threads < 1) throw Error(ErrorCode::kInvalidInput, "threads must be >= 1");
    return cfg;
  }
};

void fail_json(std::string_view code, const std::string& message) {
  Json j;
  j["status"] = "error";
  j["reason"] = code;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

int cmd_gen(const Common& c, const std::string& name) {
  const RunConfig cfg = c.load();
  const auto g = generate(name, cfg);
  const auto files = write_generated(c.out_dir, g);
  Json j;
  j["scene"] = name;
  j["bodies"] = g.truth.scene.bodies.size();
  j["hulls"] = hull_count(g.truth.scene);
  j["equilibrium_residual"] = g.truth.equilibrium.residual;
  Json written = Json::array();
  for (const auto& f : files) written.push_back(f.string());
  j["files"] = std::move(written);
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_estimate(const Common& c, const fs::path& scene_path, const fs::path& obs_path,
                 const std::optional<fs::path>& truth_path) {
  const RunConfig cfg = c.load();
  const SceneModel initial = scene_from_json(read_json(scene_path));
  const Observation obs = read_observation(obs_path);
  std::optional<SceneModel> truth;
  if (truth_path) truth = scene_from_json(read_json(*truth_path));
  const auto run = run_estimate(initial, obs, cfg, !c.no_shrink, truth ? &*truth : nullptr);
  write_estimate(c.out_dir, run, cfg);
  Json j;
  j["status"] = run.feasible(cfg) ? "ok" : "error";
  if (!run.feasible(cfg)) j["reason"] = "EqualityResidual";
  j["termination"] = run.output.termination;
  j["outer_iterations"] = run.output.outer_iterations;
  j["eq_norm"] = run.output.eq_norm;
  j["ineq_norm"] = run.output.ineq_norm;
  j["seconds"] = run.output.seconds;
  (run.feasible(cfg) ? std::cout : std::cerr) << j.dump() << "\n";
  return run.feasible(cfg) ? kOk : kCheckFailed;
}

int cmd_gradcheck(const Common& c, int states, bool negative_control) {
  const RunConfig cfg = c.load();
  GradcheckOptions o;
  o.states = states;
  o.seed = cfg.seed;
  o.physics = cfg.estimation_config().physics;
  o.corrupt = negative_control;
  bool ok = true;
  std::printf("%-18s %6s %12s %10s %9s  %s\n", "suite", "cases", "max_rel_err", "tolerance", "seconds", "result");
  for (const auto& s : run_gradcheck(o)) {
    std::printf("%-18s %6d %12.3e %10.1e %9.2f  %s\n", s.name.c_str(), s.cases, s.worst, s.tolerance, s.seconds,
                s.passed() ? "PASS" : "FAIL");
    ok = ok && s.passed();
  }
  return ok ? kOk : kCheckFailed;
}

int cmd_benchsolve(const Common& c, const std::vector<int>& pairs, int trials, int vertices) {
  const RunConfig cfg = c.load();
  BenchConfig bc;
  if (!pairs.empty()) bc.pair_counts = pairs;
  bc.trials = trials;
  bc.vertices_per_hull = vertices;
  bc.seed = cfg.seed;
  bc.threads = cfg.threads;
  const auto rows = run_bench(bc);
  const std::string csv = bench_table(rows).str();
  std::cout << csv;
  if (c.out_dir != ".") write_text(c.out_dir / "benchsolve.csv", csv);
  for (const auto& r : rows)
    if (!(r.rel_residual <= 1e-8)) {
      fail_json("ResidualCheck", std::to_string(r.pairs) + " pairs: relative residual " + format_double(r.rel_residual));
      return kCheckFailed;
    }
  return kOk;
}

int cmd_validate(const Common& c, const fs::path& result_path, const std::optional<fs::path>& truth_path) {
  RunConfig cfg = c.load();
  const EstimateOutput out = estimate_output_from_json(read_json(result_path), &cfg);
  std::optional<SceneModel> truth;
  if (truth_path) truth = scene_from_json(read_json(*truth_path));
  const auto ec = cfg.estimation_config();
  const auto rep = validate(out, ec.physics, ec.alm.eps_c, truth ? &*truth : nullptr);
  const Json j = to_json(rep);
  if (c.out_dir != ".") write_json(c.out_dir / "report.json", j);
  std::cout << j.dump(2) << "\n";
  return rep.passed ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physically consistent scene estimation from point clouds"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "Random seed");
  app.add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--aggregation", c.aggregation, "One contact pair per body pair")->check(CLI::IsMember({"on", "off"}));
  app.add_flag("--no-shrink", c.no_shrink, "Do not shrink an overlapping initialization");
  app.add_option("--out-dir", c.out_dir, "Output directory");

  std::string scene_name;
  auto* gen = app.add_subcommand("gen", "Generate a built-in scene, its observation and priors");
  gen->add_option("scene", scene_name, "Scene name")->required();

  fs::path scene_path, obs_path, result_path;
  std::optional<fs::path> truth_path;
  auto* est = app.add_subcommand("estimate", "Estimate shapes, poses and forces");
  est->add_option("scene", scene_path, "Initial scene JSON")->required()->check(CLI::ExistingFile);
  est->add_option("observation", obs_path, "Observation JSON")->required()->check(CLI::ExistingFile);
  est->add_option("--truth", truth_path, "Ground-truth scene for the report")->check(CLI::ExistingFile);

  int states = 500;
  bool negative = false;
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic derivatives with finite differences");
  grad->add_option("--states", states, "Random states per suite")->check(CLI::PositiveNumber);
  grad->add_flag("--negative-control", negative, "Corrupt one analytic gradient; the run must fail");

  std::vector<int> pairs;
  int trials = 3, vertices = 20;
  auto* bench = app.add_subcommand("benchsolve", "Time the structured solve against dense LU");
  bench->add_option("--pairs", pairs, "Pair counts")->delimiter(',');
  bench->add_option("--trials", trials, "Trials per pair count")->check(CLI::PositiveNumber);
  bench->add_option("--vertices", vertices, "Vertices per hull")->check(CLI::PositiveNumber);

  auto* val = app.add_subcommand("validate", "Recompute residuals of a result");
  val->add_option("result", result_path, "Result JSON")->required()->check(CLI::ExistingFile);
  val->add_option("--truth", truth_path, "Ground-truth scene")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(c, scene_name);
    if (*est) return cmd_estimate(c, scene_path, obs_path, truth_path);
    if (*grad) return cmd_gradcheck(c, states, negative);
    if (*bench) return cmd_benchsolve(c, pairs, trials, vertices);
    if (*val) return cmd_validate(c, result_path, truth_path);
  } catch (const Error& e) {
    fail_json(to_string(e.code()), e.what());
    return e.code() == ErrorCode::kInvalidInput || e.code() == ErrorCode::kUnknownScene ? kUsage : kRuntime;
  } catch (const std::exception& e) {
    fail_json("InternalError", e.what());
    return kRuntime;
  }
  return kUsage;
}
