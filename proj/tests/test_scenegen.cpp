#include <gtest/gtest.h>

#include <random>

#include "scenefit/scenegen.hpp"

namespace scenefit {
namespace {

std::size_t hull_count(const SceneModel& s, bool dynamic_only = true) {
  std::size_t n = 0;
  for (const auto& b : s.bodies)
    if (!dynamic_only || !b.is_static) n += b.hulls.size();
  return n;
}

/// Constraint residual with the given tangential forces, evaluated from scratch.
double constraint_norm(const SceneModel& s, const std::vector<std::vector<Vec3>>& friction = {}) {
  const auto pairs = enumerate_pairs(s, false);
  const auto layout = VariableLayout::build(s, pairs, {.optimize_shape = false});
  VectorXd z = layout.pack(s);
  for (std::size_t p = 0; p < friction.size(); ++p)
    for (std::size_t k = 0; k < friction[p].size(); ++k) z.segment<3>(layout.pair_f[p] + 3 * k) = friction[p][k];
  const auto e = evaluate_physics(s, pairs, layout, z, vertex_masses(s), {});
  return std::max(e.equality().lpNorm<Eigen::Infinity>(), e.inequality().cwiseMax(0.0).lpNorm<Eigen::Infinity>());
}

TEST(Scenes, SizesMatchTheirDescriptions) {
  const auto box = detail::layout("box_on_table");
  EXPECT_EQ(box.dynamic_body_count(), 1u);
  EXPECT_EQ(hull_count(box), 1u);
  EXPECT_EQ(box.bodies[1].hulls[0].vertices.size(), 8u);
  const auto chair = detail::layout("chair_box");
  EXPECT_EQ(chair.bodies[1].hulls.size(), 4u);
  EXPECT_EQ(chair.bodies[2].hulls.size(), 1u);
  const auto clutter = detail::layout("clutter5");
  EXPECT_GE(clutter.dynamic_body_count(), 5u);
  EXPECT_GE(hull_count(clutter), 20u);
  try {
    detail::layout("sofa");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownScene);
  }
}

TEST(Scenes, EveryBuiltinSettlesToEquilibrium) {
  for (const auto& name : builtin_scene_names()) {
    const auto gt = builtin_scene(name);
    EXPECT_LE(gt.equilibrium.residual, 5e-5) << name;
    EXPECT_LE(constraint_norm(gt.scene, gt.equilibrium.friction), 5e-4) << name;
    for (const auto& p : enumerate_pairs(gt.scene, false))
      EXPECT_TRUE(try_solve_separating_plane(side_world_vertices(gt.scene, p.a), side_world_vertices(gt.scene, p.b), {}))
          << name;
  }
}

TEST(Scenes, Deterministic) {
  const auto a = builtin_scene("stack3"), b = builtin_scene("stack3");
  for (std::size_t i = 0; i < a.scene.bodies.size(); ++i) {
    EXPECT_EQ(a.scene.bodies[i].pose.t, b.scene.bodies[i].pose.t);
    EXPECT_EQ(a.scene.bodies[i].pose.theta, b.scene.bodies[i].pose.theta);
  }
}

TEST(Observation, NoiselessFullVisibilityLiesOnTheUnion) {
  const auto s = detail::layout("clutter5");
  ObservationConfig cfg;
  cfg.noise = 0.0;
  cfg.full_visibility = true;
  const auto obs = synthesize_observation(s, cfg, 3);
  for (std::size_t i = 0; i < s.bodies.size(); ++i) {
    if (s.bodies[i].is_static) {
      EXPECT_TRUE(obs.clouds[i].empty());
      continue;
    }
    ASSERT_EQ(obs.clouds[i].size(), 400u);
    const auto u = UnionBoundary::of(s.bodies[i]);
    for (const auto& p : obs.clouds[i]) EXPECT_LT(closest_point_on_union_boundary(p, u).distance, 1e-12);
  }
}

TEST(Observation, TopDownViewSeesNoBottomFace) {
  const auto s = detail::layout("box_on_table");
  ObservationConfig cfg;
  cfg.noise = 0.0;
  cfg.view = Vec3(0, 0, -1);
  const auto obs = synthesize_observation(s, cfg, 4);
  double bottom = s.bodies[1].pose.t.z() - 0.05;
  for (const auto& p : obs.clouds[1]) EXPECT_GT(p.z(), bottom + 1e-9);
  // Only the top face faces the viewer.
  for (const auto& p : obs.clouds[1]) EXPECT_NEAR(p.z(), bottom + 0.1, 1e-12);
}

TEST(Observation, NoiseMeanMatchesHalfNormal) {
  const auto s = detail::layout("box_on_table");
  ObservationConfig cfg;
  cfg.noise = 1e-4;
  cfg.points_per_body = 10000;
  cfg.full_visibility = true;
  const auto obs = synthesize_observation(s, cfg, 5);
  const auto u = UnionBoundary::of(s.bodies[1]);
  double sum = 0.0;
  for (const auto& p : obs.clouds[1]) sum += closest_point_on_union_boundary(p, u).distance;
  const double mean = sum / obs.clouds[1].size();
  EXPECT_NEAR(mean, cfg.noise * std::sqrt(2.0 / std::acos(-1.0)), 0.05 * cfg.noise * std::sqrt(2.0 / std::acos(-1.0)));
}

TEST(Observation, PriorDropsBuriedFacesAndIsDeterministic) {
  const auto s = detail::layout("clutter5");
  const auto mesh = reference_mesh(s.bodies[2]);
  const auto u = UnionBoundary::of(s.bodies[2]);
  for (const auto& t : mesh.triangles) {
    const Vec3 c = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
    EXPECT_LT(closest_point_on_union_boundary(c, u).distance, 1e-12);
  }
  EXPECT_GT(reference_mesh(s.bodies[2], 1).vertices.size(), mesh.vertices.size());
  const auto a = synthesize_observation(s, {}, 9), b = synthesize_observation(s, {}, 9);
  EXPECT_EQ(a.clouds[3], b.clouds[3]);
  EXPECT_EQ(a.priors[3].vertices, b.priors[3].vertices);
}

TEST(Perturb, ZeroConfigIsIdentity) {
  const auto s = detail::layout("stack3");
  const auto p = perturb_initial(s, {}, 1);
  for (std::size_t i = 0; i < s.bodies.size(); ++i) {
    EXPECT_EQ(p.bodies[i].pose.t, s.bodies[i].pose.t);
    EXPECT_EQ(p.bodies[i].pose.theta, s.bodies[i].pose.theta);
    EXPECT_EQ(p.bodies[i].hulls[0].vertices, s.bodies[i].hulls[0].vertices);
  }
}

TEST(Perturb, LiftAndSink) {
  const auto gt = builtin_scene("box_on_table");
  PerturbationConfig up;
  up.lift = 0.02;
  const auto floating = perturb_initial(gt.scene, up, 2);
  EXPECT_GT(constraint_norm(floating, gt.equilibrium.friction), 10.0 * constraint_norm(gt.scene, gt.equilibrium.friction));
  PerturbationConfig down;
  down.lift = -0.01;
  const auto sunk = perturb_initial(gt.scene, down, 2);
  bool blocked = false;
  for (const auto& p : enumerate_pairs(sunk, false))
    blocked |= !try_solve_separating_plane(side_world_vertices(sunk, p.a), side_world_vertices(sunk, p.b), {});
  EXPECT_TRUE(blocked);
}

TEST(Shrink, FeasibleInputUntouched) {
  const auto gt = builtin_scene("stack3");
  const auto r = resolve_penetration(gt.scene);
  for (double f : r.factors) EXPECT_EQ(f, 1.0);
}

TEST(Shrink, TwoOverlappingCubesMatchGeometry) {
  SceneModel s;
  s.gravity.setZero();
  s.bodies = {body_from_world_hulls("a", {box_hull(Vec3(0, 0, 0), Vec3(0.1, 0.1, 0.1))}),
              body_from_world_hulls("b", {box_hull(Vec3(0, 0, 0.09), Vec3(0.1, 0.1, 0.19))})};
  const auto r = resolve_penetration(s, 1e-5, 1e-4);
  // Centres 0.09 apart, half extents 0.05 s each: 0.1 s + margin = 0.09.
  const double expected = (0.09 - 1e-5) / 0.1;
  EXPECT_NEAR(r.factors[0], expected, 1e-4 * expected);
  EXPECT_NEAR(r.factors[1], expected, 1e-4 * expected);
  EXPECT_EQ(r.scene.bodies[0].pose.t, s.bodies[0].pose.t);
  const auto a = world_vertices(r.scene.bodies[0], 0), b = world_vertices(r.scene.bodies[1], 0);
  EXPECT_GE(hull_distance(a, b).distance, 1e-5);
  EXPECT_TRUE(try_solve_separating_plane(a, b, {}));
}

TEST(Shrink, StaticSupportOnlyShrinksTheDynamicBody) {
  const auto gt = builtin_scene("box_on_table");
  PerturbationConfig down;
  down.lift = -0.01;
  const auto r = resolve_penetration(perturb_initial(gt.scene, down, 2));
  EXPECT_EQ(r.factors[0], 1.0);
  EXPECT_LT(r.factors[1], 1.0);
  EXPECT_GT(r.factors[1], 0.5);
  for (const auto& p : enumerate_pairs(r.scene, false))
    EXPECT_TRUE(try_solve_separating_plane(side_world_vertices(r.scene, p.a), side_world_vertices(r.scene, p.b), {}));
}

TEST(Shrink, PathologicalOverlapFails) {
  SceneModel s;
  s.bodies = {body_from_world_hulls("a", {box_hull(Vec3(0, 0, 0), Vec3(0.1, 0.1, 0.1))}),
              body_from_world_hulls("b", {box_hull(Vec3(0.01, 0, 0.01), Vec3(0.11, 0.1, 0.11))})};
  try {
    resolve_penetration(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShrinkFailed);
  }
}

TEST(Chamfer, ZeroForIdenticalAndTranslationForShifted) {
  const auto s = detail::layout("box_on_table");
  EXPECT_LT(chamfer_distance(s.bodies[1], s.bodies[1]), 1e-12);
  RigidBody moved = s.bodies[1];
  moved.pose.t.z() += 1e-3;
  const double c = chamfer_distance(s.bodies[1], moved);
  EXPECT_GT(c, 3e-4);
  EXPECT_LT(c, 1e-3 + 1e-12);
}

}  // namespace
}  // namespace scenefit
