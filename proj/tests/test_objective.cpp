#include <gtest/gtest.h>

#include <random>

#include "scenefit/objective.hpp"
#include "test_util.hpp"

namespace scenefit {
namespace {

using testing::numerical_jacobian;
using testing::relative_error;

BodyFrameHull box(const Vec3& lo, const Vec3& hi) {
  BodyFrameHull h;
  for (int i = 0; i < 8; ++i)
    h.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  return h;
}

TriangulatedBoundary merged_boundary(const RigidBody& b) {
  TriangulatedBoundary m;
  for (const auto& h : b.hulls) {
    const auto hb = hull_boundary(h, b.pose);
    const int base = static_cast<int>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), hb.vertices.begin(), hb.vertices.end());
    for (auto t : hb.triangles) m.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  }
  return m;
}

struct Setup {
  SceneModel scene;
  Observation obs;
  VariableLayout layout;
};

Setup make_setup(std::mt19937_64& rng) {
  Setup s;
  RigidBody b;
  b.hulls = {box(Vec3(-0.05, -0.05, -0.05), Vec3(0.05, 0.05, 0.05)), box(Vec3(0.05, -0.02, -0.02), Vec3(0.12, 0.02, 0.03))};
  b.pose.theta = Vec3(0.2, -0.1, 0.4);
  b.pose.t = Vec3(0.01, 0.02, 0.3);
  s.scene.bodies = {b};
  const auto prior = merged_boundary(b);
  std::normal_distribution<double> n(0.0, 4e-3);
  s.obs.priors = {prior};
  s.obs.clouds = {{}};
  for (const auto& v : prior.vertices) s.obs.clouds[0].push_back(v + Vec3(n(rng), n(rng), n(rng)) + Vec3(0, 0, 0.02));
  for (auto& v : s.obs.priors[0].vertices) v += Vec3(n(rng), n(rng), n(rng));
  s.layout = VariableLayout::build(s.scene, {}, {});
  return s;
}

TEST(Refresh, FirstCallHasZeroDeltasAndAllActive) {
  std::mt19937_64 rng(1);
  auto s = make_setup(rng);
  auto [set, deltas] = refresh_correspondences(s.scene, s.obs, {});
  EXPECT_EQ(set.active_count(), set.records.size());
  EXPECT_EQ(set.records.size(), 16 + s.obs.clouds[0].size() + s.obs.priors[0].vertices.size());
  for (const auto& d : deltas) EXPECT_EQ(d.delta, 0.0);
  // Type I anchors lie on the prior mesh; moving points reproduce their barycentrics.
  for (const auto& c : set.records)
    if (c.type == TermType::kHullVertex) EXPECT_LT(closest_point_on_mesh(c.anchor, s.obs.priors[0]).distance, 1e-12);
}

TEST(Refresh, UnchangedStateGivesNonPositiveDeltas) {
  std::mt19937_64 rng(2);
  auto s = make_setup(rng);
  auto [first, d0] = refresh_correspondences(s.scene, s.obs, {});
  auto [second, d1] = refresh_correspondences(s.scene, s.obs, {}, &first);
  for (const auto& d : d1) EXPECT_LE(d.delta, 1e-15);
}

TEST(Refresh, MergingHullsRaisesTheTerm) {
  SceneModel scene;
  RigidBody b;
  b.hulls = {box(Vec3(0, 0, 0), Vec3(0.8, 1, 1)), box(Vec3(0, 0, 2), Vec3(1, 1, 3))};
  scene.bodies = {b};
  Observation obs;
  obs.clouds = {{Vec3(0.5, 0.5, 1.9)}};
  obs.priors = {merged_boundary(b)};
  auto [before, d0] = refresh_correspondences(scene, obs, {});
  const auto& rec = before.records[16];
  ASSERT_EQ(rec.type, TermType::kCloudPoint);
  EXPECT_EQ(rec.hull, 1);
  EXPECT_NEAR((moving_point(scene, rec) - Vec3(0.5, 0.5, 2.0)).norm(), 0.0, 1e-12);

  // Grow the lower hull upward so the two merge around the cloud point.
  for (auto& v : scene.bodies[0].hulls[0].vertices)
    if (v.z() > 0.5) v.z() = 2.5;
  auto [after, d1] = refresh_correspondences(scene, obs, {}, &before);
  const double now = (moving_point(scene, after.records[16]) - obs.clouds[0][0]).squaredNorm();
  const double prev = (moving_point(scene, before.records[16]) - obs.clouds[0][0]).squaredNorm();
  EXPECT_NEAR(now, 0.3 * 0.3, 1e-12);  // the right boundary x = 0.8
  EXPECT_NEAR(prev, 0.1 * 0.1, 1e-12);
  ASSERT_EQ(d1.size(), 1u + obs.priors[0].vertices.size());
  EXPECT_NEAR(d1[0].delta, now - prev, 1e-15);
  EXPECT_GT(d1[0].delta, 0.0);
}

TEST(Objective, PerfectAlignmentIsZero) {
  std::mt19937_64 rng(3);
  auto s = make_setup(rng);
  s.obs.priors[0] = merged_boundary(s.scene.bodies[0]);
  s.obs.clouds[0] = s.obs.priors[0].vertices;
  auto [set, d] = refresh_correspondences(s.scene, s.obs, {});
  EXPECT_LT(evaluate_objective(s.scene, set, s.layout).value, 1e-28);
}

TEST(Objective, SingleHullVertexTerm) {
  SceneModel scene;
  RigidBody b;
  b.hulls = {box(Vec3(0, 0, 0), Vec3(1, 1, 1))};
  scene.bodies = {b};
  CorrespondenceSet set;
  Correspondence c;
  c.type = TermType::kHullVertex;
  c.anchor = Vec3(1, 0, 0);  // vertex 0 is the origin
  set.records = {c};
  const auto layout = VariableLayout::build(scene, {}, {});
  const auto e = evaluate_objective(scene, set, layout);
  EXPECT_DOUBLE_EQ(e.value, 2e-2);
}

TEST(Objective, JacobianMatchesFiniteDifferencesAndResidualNorm) {
  std::mt19937_64 rng(4);
  auto s = make_setup(rng);
  auto [set, d] = refresh_correspondences(s.scene, s.obs, {});
  const VectorXd z0 = s.layout.pack(s.scene);
  auto r = [&](const VectorXd& z) {
    SceneModel t = s.scene;
    s.layout.unpack(z, t);
    return evaluate_objective(t, set, s.layout).residual;
  };
  const auto e = evaluate_objective(s.scene, set, s.layout);
  EXPECT_NEAR(e.residual.squaredNorm(), e.value, 1e-12 * e.value);
  EXPECT_NEAR(objective_value(s.scene, set), e.value, 1e-12 * e.value);
  EXPECT_LE(relative_error(e.dense_jacobian(s.layout.size()), numerical_jacobian(r, z0)), 1e-6);
  EXPECT_LE((e.jtr(s.layout.size()) - e.dense_jacobian(s.layout.size()).transpose() * e.residual).norm(), 1e-14);
}

TEST(Trim, NoDeletionWhenAlreadyBelow) {
  std::mt19937_64 rng(5);
  auto s = make_setup(rng);
  auto [set, d] = refresh_correspondences(s.scene, s.obs, {});
  const double o = objective_value(s.scene, set);
  EXPECT_EQ(trim_terms(set, d, o, s.scene), 0u);
  EXPECT_EQ(trim_terms(set, d, std::numeric_limits<double>::infinity(), s.scene), 0u);
  EXPECT_EQ(set.active_count(), set.records.size());
}

TEST(Trim, DeletesExactlyTheOffendingRecord) {
  SceneModel scene;
  RigidBody b;
  b.hulls = {box(Vec3(0, 0, 0), Vec3(1, 1, 1))};
  scene.bodies = {b};
  CorrespondenceSet set;
  Correspondence near, far;
  near.type = far.type = TermType::kCloudPoint;
  near.anchor = Vec3(0, 0, -0.1);  // vertex 0 at distance 0.1
  far.anchor = Vec3(0, 0, -1.0);   // distance 1
  set.records = {near, far};
  const std::vector<TermDelta> deltas{{0, 0.001}, {1, 0.5}};
  const double o_prev = 0.1 * 0.01 + 1e-6;
  EXPECT_EQ(trim_terms(set, deltas, o_prev, scene), 1u);
  EXPECT_TRUE(set.records[0].active);
  EXPECT_FALSE(set.records[1].active);
  EXPECT_LE(objective_value(scene, set), o_prev);
}

TEST(Trim, ExhaustedThrows) {
  SceneModel scene;
  RigidBody b;
  b.hulls = {box(Vec3(0, 0, 0), Vec3(1, 1, 1))};
  scene.bodies = {b};
  CorrespondenceSet set;
  Correspondence hv, cp;
  hv.type = TermType::kHullVertex;
  hv.anchor = Vec3(0, 0, -1);
  cp.type = TermType::kCloudPoint;
  cp.anchor = Vec3(0, 0, -1);
  set.records = {hv, cp};
  try {
    trim_terms(set, {{1, 0.1}}, 1e-3, scene);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTrimExhausted);
  }
}

TEST(Trim, DeletionLeavesOtherResidualsUnchanged) {
  std::mt19937_64 rng(6);
  auto s = make_setup(rng);
  auto [set, d] = refresh_correspondences(s.scene, s.obs, {});
  const auto full = evaluate_objective(s.scene, set, s.layout);
  const std::size_t victim = d[3].record;
  set.records[victim].active = false;
  const auto trimmed = evaluate_objective(s.scene, set, s.layout);
  EXPECT_EQ(trimmed.residual.head(3 * victim), full.residual.head(3 * victim));
  EXPECT_EQ(trimmed.residual.tail(trimmed.residual.size() - 3 * victim),
            full.residual.tail(full.residual.size() - 3 * victim - 3));
}

}  // namespace
}  // namespace scenefit
