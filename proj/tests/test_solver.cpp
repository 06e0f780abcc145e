#include <gtest/gtest.h>

#include <random>

#include "scenefit/solver.hpp"
#include "test_util.hpp"

namespace scenefit {
namespace {

using testing::numerical_jacobian;
using testing::relative_error;

BodyFrameHull box(const Vec3& half) {
  BodyFrameHull h;
  for (int i = 0; i < 8; ++i)
    h.vertices.emplace_back((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(), (i & 4) ? half.z() : -half.z());
  return h;
}

SceneModel box_on_table(double height) {
  SceneModel s;
  RigidBody t;
  t.is_static = true;
  t.hulls = {box(Vec3(0.5, 0.5, 0.05))};
  t.pose.t = Vec3(0, 0, -0.05);
  RigidBody b;
  b.hulls = {box(Vec3::Constant(0.05))};
  b.pose.t = Vec3(0, 0, height);
  s.bodies = {t, b};
  return s;
}

/// Height of the box centre at which the vertical generalized force vanishes.
double equilibrium_height() {
  SceneModel s = box_on_table(0.06);
  const auto pairs = enumerate_pairs(s, false);
  const auto layout = VariableLayout::build(s, pairs, {.optimize_shape = false, .friction = false});
  const auto masses = vertex_masses(s);
  auto vertical = [&](double h) {
    s.bodies[1].pose.t.z() = h;
    return evaluate_physics(s, pairs, layout, layout.pack(s), masses, {}).equi[5];
  };
  double lo = 0.05 + 1e-9, hi = 0.06;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (vertical(mid) > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

TEST(Lm, BoxSettlesAtRootFoundHeight) {
  const double h = equilibrium_height();
  EstimationProblem p(box_on_table(h + 2e-3), {.optimize_shape = false, .friction = false}, {});
  VectorXd z = p.layout().pack(p.scene());
  const AlmSettings s;
  const auto rep = lm_minimize(p, z, p.initial_penalty(s), s);
  EXPECT_NE(rep.stop, "damping");
  EXPECT_NEAR(z[5], h, 1e-6);
  EXPECT_LE(z.head<2>().norm(), 1e-4);  // stays level
  EXPECT_EQ(rep.infeasible_accepts, 0);
}

TEST(Lm, ZeroResidualReturnsImmediately) {
  SceneModel s;
  s.gravity.setZero();
  RigidBody b;
  b.hulls = {box(Vec3::Constant(0.1))};
  s.bodies = {b};
  EstimationProblem p(s, {}, {});
  VectorXd z = p.layout().pack(p.scene());
  const VectorXd z0 = z;
  const auto rep = lm_minimize(p, z, p.initial_penalty({}), {});
  EXPECT_EQ(rep.iterations, 0);
  EXPECT_EQ(rep.stop, "residual");
  EXPECT_EQ(z, z0);
}

struct Randomized {
  EstimationProblem problem;
  VectorXd z;
  Penalty pen;
};

Randomized randomized_state(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  SceneModel s = box_on_table(0.053);
  s.bodies[1].pose.theta = Vec3(0.01, -0.02, 0.3);
  RigidBody top;
  top.hulls = {box(Vec3(0.03, 0.03, 0.02))};
  top.pose.t = Vec3(0.01, 0.0, 0.13);
  s.bodies.push_back(top);
  Randomized r{EstimationProblem(s, {}, {}), {}, {}};
  Observation obs;
  obs.clouds = {{}, {Vec3(0.06, 0.0, 0.05), Vec3(0.0, 0.0, 0.11)}, {Vec3(0.0, 0.01, 0.16)}};
  r.problem.correspondences() = refresh_correspondences(r.problem.scene(), obs, {}).first;
  r.z = r.problem.layout().pack(r.problem.scene());
  const auto& l = r.problem.layout();
  for (int k = l.qx(); k < l.size(); ++k) r.z[k] = 1e-3 * n(rng);
  r.pen = r.problem.initial_penalty({});
  for (auto& v : r.pen.lambda_eq) v = 0.1 * n(rng);
  for (auto& v : r.pen.lambda_ineq) v = std::abs(0.1 * n(rng));
  r.pen.rho_eq = 0.3;
  r.pen.rho_ineq = 2.0;
  return r;
}

TEST(Residual, GradientAndGaussNewtonMatchFiniteDifferences) {
  auto r = randomized_state(3);
  const auto e = r.problem.evaluate(r.z, r.pen);
  ASSERT_TRUE(e);
  auto res = [&](const VectorXd& z) { return r.problem.evaluate(z, r.pen)->residual; };
  const MatrixXd j = numerical_jacobian(res, r.z);
  EXPECT_LE(relative_error(e->gradient, j.transpose() * e->residual), 1e-4);
  const auto sys = r.problem.gauss_newton(*e, r.pen);
  EXPECT_LE(relative_error(sys.dense_H(), j.transpose() * j), 1e-4);
}

TEST(Residual, SquaredNormSplitsIntoObjectiveAndPenalties) {
  auto r = randomized_state(4);
  const auto e = r.problem.evaluate(r.z, r.pen);
  const double expected = e->objective.value + r.pen.rho_eq * (e->c_eq + r.pen.lambda_eq / r.pen.rho_eq).squaredNorm() +
                          r.pen.rho_ineq * (e->c_ineq + r.pen.lambda_ineq / r.pen.rho_ineq).squaredNorm();
  EXPECT_NEAR(e->cost, expected, 1e-12 * expected);
  EXPECT_GE(e->c_ineq.minCoeff(), 0.0);
}

TEST(Alm, InfeasibleStartThrows) {
  try {
    alm_optimize(box_on_table(0.04), {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInfeasibleInitialization);
  }
}

TEST(Alm, EquilibriumWithExactObservationStopsAfterOneIteration) {
  const SceneModel s = box_on_table(equilibrium_height());
  Observation obs;
  obs.clouds = {{}, {}};
  obs.priors = {{}, hull_boundary(s.bodies[1].hulls[0], s.bodies[1].pose)};
  obs.clouds[1] = obs.priors[1].vertices;
  const auto res = alm_optimize(s, obs, {});
  EXPECT_TRUE(res.converged);
  ASSERT_EQ(res.trace.size(), 1u);
  EXPECT_LE(res.eq_norm, 5e-4);
  EXPECT_EQ(res.infeasible_accepts, 0);
}

TEST(Alm, PerturbedBoxConvergesWithMonotoneObjective) {
  const double h = equilibrium_height();
  const SceneModel truth = box_on_table(h);
  Observation obs;
  obs.clouds = {{}, {}};
  obs.priors = {{}, hull_boundary(truth.bodies[1].hulls[0], truth.bodies[1].pose)};
  obs.clouds[1] = obs.priors[1].vertices;
  SceneModel start = truth;
  start.bodies[1].pose.t += Vec3(0.003, -0.002, 0.01);
  start.bodies[1].pose.theta = Vec3(0.02, 0.01, 0.05);
  const auto res = alm_optimize(start, obs, {});
  EXPECT_TRUE(res.converged) << res.termination;
  EXPECT_LE(res.trace.size(), 15u);
  EXPECT_EQ(res.infeasible_accepts, 0);
  for (std::size_t i = 1; i < res.trace.size(); ++i) EXPECT_LE(res.trace[i].objective, res.trace[i].objective_prev);
  for (const auto& t : res.trace)
    std::printf("it %d O %.3e O+ %.3e eq %.3e in %.3e kkt %.3e rho %.1e lm %d %s\n", t.iteration, t.objective,
                t.objective_post, t.eq_norm, t.ineq_norm, t.kkt, t.rho_eq, t.lm_iterations, t.lm_stop.c_str());
  EXPECT_GE(res.penalty.lambda_ineq.minCoeff(), 0.0);
}

}  // namespace
}  // namespace scenefit
