#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "scenefit/config.hpp"
#include "scenefit/contact.hpp"
#include "scenefit/io.hpp"
#include "scenefit/physics.hpp"
#include "scenefit/scenegen.hpp"
#include "scenefit/solver.hpp"

namespace scenefit {

/// What an estimation run leaves behind: the scene, the tangential forces per
/// contact pair and the solver's own summary.
struct EstimateOutput {
  SceneModel scene;
  bool aggregation = false;
  bool friction = true;
  std::vector<std::vector<Vec3>> forces;  // per pair, per vertex (side A then side B)
  std::string termination;
  bool converged = false;
  int outer_iterations = 0;
  int lm_iterations = 0;
  int infeasible_accepts = 0;
  double eq_norm = 0.0;
  double ineq_norm = 0.0;
  double seconds = 0.0;
  std::vector<double> shrink_factors;
};

inline EstimateOutput summarize(const AlmResult& res, const ProblemOptions& options, double seconds) {
  EstimateOutput out;
  out.scene = res.scene;
  out.aggregation = options.aggregation;
  out.friction = options.friction;
  for (std::size_t p = 0; p < res.pairs.size(); ++p) {
    std::vector<Vec3> f(res.layout.pair_vertices[p], Vec3::Zero());
    if (res.layout.pair_f[p] >= 0)
      for (std::size_t k = 0; k < f.size(); ++k) f[k] = res.z.segment<3>(res.layout.pair_f[p] + 3 * k);
    out.forces.push_back(std::move(f));
  }
  out.termination = res.termination;
  out.converged = res.converged;
  out.outer_iterations = static_cast<int>(res.trace.size());
  out.lm_iterations = res.lm_iterations;
  out.infeasible_accepts = res.infeasible_accepts;
  out.eq_norm = res.eq_norm;
  out.ineq_norm = res.ineq_norm;
  out.seconds = seconds;
  return out;
}

inline Json to_json(const EstimateOutput& o, const RunConfig& cfg) {
  Json forces = Json::array();
  for (const auto& f : o.forces) forces.push_back(to_json(f));
  Json j;
  j["scene"] = to_json(o.scene);
  j["aggregation"] = o.aggregation;
  j["friction"] = o.friction;
  j["forces"] = std::move(forces);
  j["solver"] = {{"termination", o.termination},
                 {"converged", o.converged},
                 {"outer_iterations", o.outer_iterations},
                 {"lm_iterations", o.lm_iterations},
                 {"infeasible_accepts", o.infeasible_accepts},
                 {"eq_norm", o.eq_norm},
                 {"ineq_norm", o.ineq_norm},
                 {"seconds", o.seconds},
                 {"shrink_factors", o.shrink_factors}};
  j["config"] = to_json(cfg);
  return j;
}

inline EstimateOutput estimate_output_from_json(const Json& j, RunConfig* cfg = nullptr) {
  EstimateOutput o;
  o.scene = scene_from_json(detail::get_field<Json>(j, "scene"));
  o.aggregation = detail::get_field<bool>(j, "aggregation");
  o.friction = detail::get_field<bool>(j, "friction");
  for (const auto& f : detail::get_field<Json>(j, "forces")) o.forces.push_back(points_from_json(f));
  const Json s = detail::get_field<Json>(j, "solver");
  o.termination = detail::get_field<std::string>(s, "termination");
  o.converged = detail::get_field<bool>(s, "converged");
  o.outer_iterations = detail::get_field<int>(s, "outer_iterations");
  o.lm_iterations = detail::get_field<int>(s, "lm_iterations");
  o.infeasible_accepts = detail::get_field<int>(s, "infeasible_accepts");
  o.eq_norm = detail::get_field<double>(s, "eq_norm");
  o.ineq_norm = detail::get_field<double>(s, "ineq_norm");
  o.seconds = detail::get_field<double>(s, "seconds");
  o.shrink_factors = detail::get_field<std::vector<double>>(s, "shrink_factors");
  if (cfg && j.contains("config")) apply_json(*cfg, j["config"]);
  return o;
}

struct PairSummary {
  int body_a = 0, hull_a = 0, body_b = 0, hull_b = 0;  // hull -1 when aggregated
  double gap = 0.0;                // closest distance between the two sides
  double normal_force = 0.0;       // |sum of normal forces on side B|
  double friction_force = 0.0;     // sum of |f| over the pair
  double third_law = 0.0;          // |sum of normal forces over both sides|
  double normal_torque = 0.0;      // plane-normal component of sum X x f
};

struct BodyReport {
  std::string name;
  double net_force = 0.0;   // |gravity + contact - friction|
  double net_torque = 0.0;  // about the world origin
  std::optional<double> rotation_error, translation_error, chamfer;
};

struct ValidationReport {
  double eq_norm = 0.0;
  double ineq_norm = 0.0;
  double min_gap = 0.0;
  int penetrations = 0;
  std::vector<PairSummary> pairs;
  std::vector<BodyReport> bodies;
  double seconds = 0.0;
  int outer_iterations = 0;
  int lm_iterations = 0;
  double solver_eq_norm = 0.0;
  double solver_ineq_norm = 0.0;
  bool passed = false;
};

/// Plane-normal component of the friction torque of one evaluated pair.
inline double pair_normal_torque(const PairBlock& blk, const std::vector<Vec3>& forces) {
  Vec3 torque = Vec3::Zero();
  for (std::size_t k = 0; k < blk.world.size(); ++k) torque += blk.world[k].cross(forces[k]);
  return blk.plane.head<3>().normalized().dot(torque);
}

/// Recomputes every residual of a result from its scene and forces alone:
/// fresh pairs, cold plane solves and masses at the final shapes.
inline ValidationReport validate(const EstimateOutput& out, const PhysicsConfig& physics, double eps_c,
                                 const SceneModel* truth = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const SceneModel& scene = out.scene;
  scene.validate();
  ProblemOptions opt;
  opt.aggregation = out.aggregation;
  opt.friction = out.friction;
  const auto pairs = enumerate_pairs(scene, opt.aggregation);
  if (opt.friction && pairs.size() != out.forces.size())
    throw Error(ErrorCode::kInvalidInput, "result lists " + std::to_string(out.forces.size()) + " force blocks for " +
                                              std::to_string(pairs.size()) + " contact pairs");
  const auto layout = VariableLayout::build(scene, pairs, opt);
  VectorXd z = layout.pack(scene);
  for (std::size_t p = 0; p < pairs.size() && opt.friction; ++p) {
    if (static_cast<int>(out.forces[p].size()) != layout.pair_vertices[p])
      throw Error(ErrorCode::kInvalidInput, "force block " + std::to_string(p) + " has the wrong vertex count");
    for (std::size_t k = 0; k < out.forces[p].size(); ++k) z.segment<3>(layout.pair_f[p] + 3 * k) = out.forces[p][k];
  }
  const auto masses = vertex_masses(scene);

  ValidationReport rep;
  rep.outer_iterations = out.outer_iterations;
  rep.lm_iterations = out.lm_iterations;
  rep.solver_eq_norm = out.eq_norm;
  rep.solver_ineq_norm = out.ineq_norm;

  rep.min_gap = std::numeric_limits<double>::infinity();
  for (const auto& pair : pairs) {
    PairSummary ps;
    ps.body_a = pair.a.body;
    ps.hull_a = pair.a.hull;
    ps.body_b = pair.b.body;
    ps.hull_b = pair.b.hull;
    ps.gap = hull_distance(side_world_vertices(scene, pair.a), side_world_vertices(scene, pair.b)).distance;
    // Aggregated sides are the hull union's convex hull, so check hull by hull as well.
    if (pair.a.hull == PairSide::kAllHulls || pair.b.hull == PairSide::kAllHulls)
      ps.gap = detail::body_gap(scene.bodies[pair.a.body], scene.bodies[pair.b.body]);
    rep.min_gap = std::min(rep.min_gap, ps.gap);
    if (ps.gap <= kTouchingGap) ++rep.penetrations;
    rep.pairs.push_back(ps);
  }

  std::optional<PhysicsEval> ev;
  if (rep.penetrations == 0) {
    try {
      ev = evaluate_physics(scene, pairs, layout, z, masses, physics);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInfeasibleState) throw;
    }
  }
  if (!ev) {
    rep.eq_norm = rep.ineq_norm = std::numeric_limits<double>::infinity();
    rep.penetrations = std::max(rep.penetrations, 1);
  } else {
    const VectorXd ceq = ev->equality();
    const VectorXd cin = ev->inequality().cwiseMax(0.0);
    rep.eq_norm = ceq.size() ? ceq.lpNorm<Eigen::Infinity>() : 0.0;
    rep.ineq_norm = cin.size() ? cin.lpNorm<Eigen::Infinity>() : 0.0;

    std::vector<Vec3> force(scene.bodies.size(), Vec3::Zero()), torque(scene.bodies.size(), Vec3::Zero());
    for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
      const auto& b = scene.bodies[i];
      const double m = static_cast<double>(b.vertex_count()) * masses[i];
      const Vec3 com = [&] {
        Vec3 c = Vec3::Zero();
        for (std::size_t j = 0; j < b.hulls.size(); ++j)
          for (const auto& w : world_vertices(b, j)) c += w;
        return Vec3(c / static_cast<double>(b.vertex_count()));
      }();
      force[i] = m * scene.gravity;
      torque[i] = com.cross(m * scene.gravity);
    }
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto& blk = ev->pairs[p];
      Vec3 normal_b = Vec3::Zero(), normal_all = Vec3::Zero();
      double friction = 0.0;
      for (std::size_t k = 0; k < blk.vertices.size(); ++k) {
        const int body = blk.vertices[k].body;
        const Vec3 f = opt.friction ? out.forces[p][k] : Vec3::Zero();
        const Vec3 total = blk.normal_forces[k] - f;
        force[body] += total;
        torque[body] += blk.world[k].cross(total);
        normal_all += blk.normal_forces[k];
        if (static_cast<int>(k) >= blk.side_a_count) normal_b += blk.normal_forces[k];
        friction += f.norm();
      }
      rep.pairs[p].normal_force = normal_b.norm();
      rep.pairs[p].third_law = normal_all.norm();
      rep.pairs[p].friction_force = friction;
      rep.pairs[p].normal_torque = opt.friction ? pair_normal_torque(blk, out.forces[p]) : 0.0;
    }
    for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
      if (scene.bodies[i].is_static) continue;
      BodyReport br;
      br.name = scene.bodies[i].name;
      br.net_force = force[i].norm();
      br.net_torque = torque[i].norm();
      rep.bodies.push_back(br);
    }
  }

  if (truth) {
    if (truth->bodies.size() != scene.bodies.size())
      throw Error(ErrorCode::kInvalidInput, "ground truth has a different number of bodies");
    std::size_t slot = 0;
    for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
      if (scene.bodies[i].is_static) continue;
      if (rep.bodies.size() <= slot) rep.bodies.push_back(BodyReport{scene.bodies[i].name});
      auto& br = rep.bodies[slot++];
      const auto& est = scene.bodies[i];
      const auto& gt = truth->bodies[i];
      br.rotation_error = rotation_log(est.pose.rotation() * gt.pose.rotation().transpose()).norm();
      br.translation_error = (est.pose.t - gt.pose.t).norm();
      br.chamfer = chamfer_distance(est, gt);
    }
  }

  rep.passed = rep.penetrations == 0 && rep.eq_norm <= eps_c && rep.ineq_norm <= eps_c;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline Json to_json(const ValidationReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  Json pairs = Json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"a", {p.body_a, p.hull_a}},
                     {"b", {p.body_b, p.hull_b}},
                     {"gap", num(p.gap)},
                     {"normal_force", p.normal_force},
                     {"friction_force", p.friction_force},
                     {"third_law", p.third_law},
                     {"normal_torque", p.normal_torque}});
  Json bodies = Json::array();
  for (const auto& b : r.bodies) {
    Json jb = {{"name", b.name}, {"net_force", b.net_force}, {"net_torque", b.net_torque}};
    if (b.rotation_error) jb["rotation_error"] = *b.rotation_error;
    if (b.translation_error) jb["translation_error"] = *b.translation_error;
    if (b.chamfer) jb["chamfer"] = *b.chamfer;
    bodies.push_back(std::move(jb));
  }
  Json j;
  j["passed"] = r.passed;
  j["eq_norm"] = num(r.eq_norm);
  j["ineq_norm"] = num(r.ineq_norm);
  j["solver_eq_norm"] = r.solver_eq_norm;
  j["solver_ineq_norm"] = r.solver_ineq_norm;
  j["min_gap"] = num(r.min_gap);
  j["penetrations"] = r.penetrations;
  j["outer_iterations"] = r.outer_iterations;
  j["lm_iterations"] = r.lm_iterations;
  j["seconds"] = r.seconds;
  j["bodies"] = std::move(bodies);
  j["pairs"] = std::move(pairs);
  return j;
}

}  // namespace scenefit
