#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "scenefit/contact.hpp"
#include "scenefit/objective.hpp"
#include "scenefit/physics.hpp"
#include "scenefit/scenegen.hpp"

namespace scenefit {

/// Central finite-difference Jacobian of f at x. With richardson the h and 2h
/// central quotients are combined to cancel the O(h^2) truncation term.
inline MatrixXd numerical_jacobian(const std::function<VectorXd(const VectorXd&)>& f, const VectorXd& x,
                                   double h = 1e-6, bool richardson = false) {
  auto quotient = [&](Eigen::Index i, double step) {
    VectorXd xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    return VectorXd((f(xp) - f(xm)) / (2.0 * step));
  };
  const VectorXd f0 = f(x);
  MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    jac.col(i) = quotient(i, h);
    if (richardson) jac.col(i) = (4.0 * jac.col(i) - quotient(i, 2.0 * h)) / 3.0;
  }
  return jac;
}

/// max |a - n| over max(max |n|, floor).
inline double relative_error(const MatrixXd& analytic, const MatrixXd& numeric, double floor = 1e-8) {
  if (numeric.size() == 0) return 0.0;
  const double scale = std::max(numeric.cwiseAbs().maxCoeff(), floor);
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

struct GradcheckOptions {
  int states = 500;          // per gradient suite
  int hessian_pairs = 50;
  double step = 1e-6;
  bool richardson = true;
  double gradient_tolerance = 1e-4;
  double hessian_tolerance = 1e-3;
  double near_gap = 1e-4;    // every fifth state sits this close to contact
  std::uint64_t seed = 1;
  PhysicsConfig physics;
  bool corrupt = false;      // perturbs one analytic gradient; the run must then fail
};

struct GradcheckSuite {
  std::string name;
  int cases = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  double min_gap = std::numeric_limits<double>::infinity();

  bool passed() const { return std::isfinite(worst) && worst <= tolerance; }
};

namespace detail {

inline Vec3 random_direction(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  while (v.norm() < 1e-6) v = Vec3(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Random full-dimensional point set of roughly the given radius.
inline std::vector<Vec3> random_blob(std::mt19937_64& rng, const Vec3& center, double radius) {
  std::uniform_int_distribution<int> count(5, 10);
  std::uniform_real_distribution<double> r(0.4, 1.0);
  std::vector<Vec3> pts;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) pts.push_back(center + radius * r(rng) * random_direction(rng));
  return pts;
}

/// Translates b so that the distance between conv(a) and conv(b) is exactly gap.
inline void place_at_gap(const std::vector<Vec3>& a, std::vector<Vec3>& b, double gap) {
  const auto d = hull_distance(a, b);
  Vec3 u = d.point_b - d.point_a;
  if (u.norm() < 1e-12) throw Error(ErrorCode::kInvalidInput, "blobs overlap");
  u.normalize();
  for (auto& p : b) p += (gap - d.distance) * u;
}

inline double sample_gap(std::mt19937_64& rng, int index, double near_gap) {
  if (index % 5 == 0) return near_gap;
  std::uniform_real_distribution<double> e(std::log(near_gap), std::log(5e-2));
  return std::exp(e(rng));
}

inline VectorXd stack(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  VectorXd z(3 * (a.size() + b.size()));
  for (std::size_t k = 0; k < a.size(); ++k) z.segment<3>(3 * k) = a[k];
  for (std::size_t k = 0; k < b.size(); ++k) z.segment<3>(3 * (a.size() + k)) = b[k];
  return z;
}

inline std::pair<std::vector<Vec3>, std::vector<Vec3>> unstack(const VectorXd& z, std::size_t na) {
  std::pair<std::vector<Vec3>, std::vector<Vec3>> out;
  for (Eigen::Index k = 0; k < z.size() / 3; ++k)
    (static_cast<std::size_t>(k) < na ? out.first : out.second).push_back(z.segment<3>(3 * k));
  return out;
}

inline BodyFrameHull jittered_box(std::mt19937_64& rng, const Vec3& half) {
  std::uniform_real_distribution<double> j(-0.15, 0.15);
  BodyFrameHull h;
  for (int i = 0; i < 8; ++i) {
    const Vec3 s((i & 1) ? 1 : -1, (i & 2) ? 1 : -1, (i & 4) ? 1 : -1);
    h.vertices.push_back(s.cwiseProduct(half) + half.cwiseProduct(Vec3(j(rng), j(rng), j(rng))));
  }
  return h;
}

/// A static slab and one or two randomly posed, randomly shaped bodies above it,
/// the lowest separated from the slab by gap.
inline SceneModel random_contact_scene(std::mt19937_64& rng, double gap, bool two_bodies) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), size(0.02, 0.05);
  SceneModel s;
  RigidBody slab;
  slab.name = "slab";
  slab.is_static = true;
  slab.hulls = {box_hull(Vec3(-0.3, -0.3, -0.04), Vec3(0.3, 0.3, 0.0))};
  s.bodies.push_back(slab);
  auto lowest = [](const RigidBody& b) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.hulls.size(); ++j)
      for (const auto& w : world_vertices(b, j)) lo = std::min(lo, w.z());
    return lo;
  };
  const int count = two_bodies ? 2 : 1;
  double floor_z = 0.0;
  for (int i = 0; i < count; ++i) {
    RigidBody b;
    b.name = "body" + std::to_string(i);
    b.hulls = {jittered_box(rng, Vec3(size(rng), size(rng), size(rng)))};
    if (u(rng) > 0.0) b.hulls.push_back(jittered_box(rng, Vec3(size(rng), size(rng), size(rng))));
    if (b.hulls.size() == 2)
      for (auto& v : b.hulls[1].vertices) v.x() += 0.06;
    b.pose.theta = 0.3 * Vec3(u(rng), u(rng), u(rng));
    b.pose.t = Vec3(0.01 * u(rng), 0.01 * u(rng), 0.0);
    b.pose.t.z() += floor_z + gap - lowest(b);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.hulls.size(); ++j)
      for (const auto& w : world_vertices(b, j)) top = std::max(top, w.z());
    floor_z = top;
    s.bodies.push_back(std::move(b));
  }
  return s;
}

}  // namespace detail

/// Rodrigues first and second derivatives and the vertex transform Jacobians.
inline GradcheckSuite check_rotation(const GradcheckOptions& o) {
  GradcheckSuite s{"rotation", 0, 0.0, o.gradient_tolerance};
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(o.seed + 11);
  std::uniform_real_distribution<double> angle(0.0, 3.1);
  for (int i = 0; i < o.states; ++i) {
    const double a = i % 10 == 0 ? 1e-9 : angle(rng);
    const Vec3 theta = a * detail::random_direction(rng);
    const Vec3 t = 0.1 * detail::random_direction(rng);
    const Vec3 x = 0.05 * detail::random_direction(rng);
    const auto rd = rodrigues_derivatives(theta);
    auto world = [&](const VectorXd& v) {
      return VectorXd(rodrigues(v.segment<3>(0)) * v.segment<3>(6) + v.segment<3>(3));
    };
    VectorXd v(9);
    v << theta, t, x;
    const auto tf = transform_vertex(rd, t, x);
    MatrixXd analytic(3, 9);
    analytic << tf.d_theta, tf.d_t, tf.d_x;
    s.worst = std::max(s.worst, relative_error(analytic, numerical_jacobian(world, v, o.step, o.richardson)));
    for (int b = 0; b < 3; ++b) {
      auto first = [&](const VectorXd& th) {
        const auto r = rodrigues_derivatives(th);
        return VectorXd(Eigen::Map<const VectorXd>(r.first[b].data(), 9));
      };
      const MatrixXd num = numerical_jacobian(first, theta, o.step, o.richardson);
      MatrixXd ana(9, 3);
      for (int c = 0; c < 3; ++c) ana.col(c) = Eigen::Map<const VectorXd>(rd.second[b][c].data(), 9);
      s.worst = std::max(s.worst, relative_error(ana, num));
    }
    ++s.cases;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

/// Gravity potential over pose and shape variables.
inline GradcheckSuite check_gravity(const GradcheckOptions& o) {
  GradcheckSuite s{"gravity", 0, 0.0, o.gradient_tolerance};
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(o.seed + 12);
  for (int i = 0; i < o.states; ++i) {
    const SceneModel scene = detail::random_contact_scene(rng, detail::sample_gap(rng, i, o.near_gap), i % 2 == 1);
    const auto layout = VariableLayout::build(scene, {}, {});
    const auto masses = vertex_masses(scene);
    const VectorXd z = layout.pack(scene);
    auto value = [&](const VectorXd& v) {
      SceneModel t = scene;
      layout.unpack(v, t);
      return VectorXd::Constant(1, gravity_potential(t, layout, masses).value);
    };
    const VectorXd g = gravity_potential(scene, layout, masses).gradient;
    s.worst = std::max(s.worst, relative_error(g.transpose(), numerical_jacobian(value, z, o.step, o.richardson)));
    ++s.cases;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

/// Pair potential gradient against differences of the nested minimum.
inline GradcheckSuite check_contact_gradient(const GradcheckOptions& o) {
  GradcheckSuite s{"contact_gradient", 0, 0.0, o.gradient_tolerance};
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(o.seed + 13);
  const BarrierConfig& cfg = o.physics.barrier;
  for (int i = 0; i < o.states; ++i) {
    auto a = detail::random_blob(rng, Vec3::Zero(), 0.05);
    auto b = detail::random_blob(rng, 0.12 * detail::random_direction(rng), 0.05);
    const double gap = detail::sample_gap(rng, i, o.near_gap);
    detail::place_at_gap(a, b, gap);
    s.min_gap = std::min(s.min_gap, gap);
    const auto cp = collision_potential(a, b, cfg);
    auto value = [&](const VectorXd& v) {
      const auto [pa, pb] = detail::unstack(v, a.size());
      return VectorXd::Constant(1, collision_potential(pa, pb, cfg, cp.plane).value);
    };
    VectorXd g = cp.gradient;
    if (o.corrupt && i == 0) g[0] += 1e-2 * g.cwiseAbs().maxCoeff();
    s.worst = std::max(s.worst, relative_error(g.transpose(), numerical_jacobian(value, detail::stack(a, b), o.step, o.richardson)));
    ++s.cases;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

/// Implicit Hessian of the pair potential against differences of its gradient.
inline GradcheckSuite check_contact_hessian(const GradcheckOptions& o) {
  GradcheckSuite s{"contact_hessian", 0, 0.0, o.hessian_tolerance};
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(o.seed + 14);
  const BarrierConfig& cfg = o.physics.barrier;
  for (int i = 0; i < o.hessian_pairs; ++i) {
    auto a = detail::random_blob(rng, Vec3::Zero(), 0.05);
    auto b = detail::random_blob(rng, 0.12 * detail::random_direction(rng), 0.05);
    const double gap = detail::sample_gap(rng, i, o.near_gap);
    detail::place_at_gap(a, b, gap);
    s.min_gap = std::min(s.min_gap, gap);
    const auto cp = collision_potential(a, b, cfg);
    auto grad = [&](const VectorXd& v) {
      const auto [pa, pb] = detail::unstack(v, a.size());
      return collision_potential(pa, pb, cfg, cp.plane).gradient;
    };
    s.worst = std::max(s.worst, relative_error(cp.hessian, numerical_jacobian(grad, detail::stack(a, b), o.step, o.richardson)));
    ++s.cases;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

/// Jacobians of the equilibrium, orthogonality, plane-balance and cone blocks.
inline GradcheckSuite check_constraints(const GradcheckOptions& o) {
  GradcheckSuite s{"constraints", 0, 0.0, o.gradient_tolerance};
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(o.seed + 15);
  std::normal_distribution<double> force(0.0, 1e-3);
  for (int i = 0; i < o.states; ++i) {
    const double gap = detail::sample_gap(rng, i, o.near_gap);
    const SceneModel scene = detail::random_contact_scene(rng, gap, i % 4 == 3);
    s.min_gap = std::min(s.min_gap, gap);
    ProblemOptions opt;
    opt.aggregation = i % 8 == 7;
    auto pairs = enumerate_pairs(scene, opt.aggregation);
    const auto layout = VariableLayout::build(scene, pairs, opt);
    const auto masses = vertex_masses(scene);
    VectorXd z = layout.pack(scene);
    for (int k = layout.qx(); k < layout.size(); ++k) z[k] = force(rng);
    auto eval = [&](const VectorXd& v) {
      SceneModel t = scene;
      layout.unpack(v, t);
      return evaluate_physics(t, pairs, layout, v, masses, o.physics);
    };
    const auto e = eval(z);
    for (std::size_t p = 0; p < pairs.size(); ++p) pairs[p].plane = e.pairs[p].plane;
    const Eigen::Index neq = e.equality().size();
    const MatrixXd num = numerical_jacobian(
        [&](const VectorXd& v) {
          const auto ev = eval(v);
          VectorXd c(neq + ev.inequality().size());
          c << ev.equality(), ev.inequality();
          return c;
        },
        z, o.step, o.richardson);
    const MatrixXd num_eq = num.topRows(neq);
    const MatrixXd num_in = num.bottomRows(num.rows() - neq);
    const MatrixXd ana_eq = e.equality_jacobian(layout);
    const MatrixXd ana_in = e.inequality_jacobian(layout);
    // Block by block so that small blocks are not hidden behind large ones.
    const Eigen::Index nq = e.equi.size();
    s.worst = std::max(s.worst, relative_error(ana_eq.topRows(nq), num_eq.topRows(nq)));
    Eigen::Index at = nq;
    for (const auto& blk : e.pairs) {
      const Eigen::Index orth = blk.eq.size() - 6;
      s.worst = std::max(s.worst, relative_error(ana_eq.middleRows(at, orth), num_eq.middleRows(at, orth), 1e-12));
      s.worst = std::max(s.worst, relative_error(ana_eq.middleRows(at + orth, 3), num_eq.middleRows(at + orth, 3)));
      s.worst = std::max(s.worst, relative_error(ana_eq.middleRows(at + orth + 3, 3), num_eq.middleRows(at + orth + 3, 3)));
      at += blk.eq.size();
    }
    s.worst = std::max(s.worst, relative_error(ana_in, num_in));
    ++s.cases;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

/// Objective residual Jacobian for all three term types.
inline GradcheckSuite check_objective(const GradcheckOptions& o) {
  GradcheckSuite s{"objective", 0, 0.0, o.gradient_tolerance};
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(o.seed + 16);
  std::normal_distribution<double> noise(0.0, 5e-3);
  for (int i = 0; i < o.states; ++i) {
    SceneModel scene = detail::random_contact_scene(rng, detail::sample_gap(rng, i, o.near_gap), false);
    scene.bodies.erase(scene.bodies.begin());
    const auto& b = scene.bodies[0];
    Observation obs;
    TriangulatedBoundary prior;
    for (const auto& h : b.hulls) {
      const auto hb = hull_boundary(h, b.pose);
      const int base = static_cast<int>(prior.vertices.size());
      prior.vertices.insert(prior.vertices.end(), hb.vertices.begin(), hb.vertices.end());
      for (auto t : hb.triangles) prior.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
    }
    std::vector<Vec3> cloud;
    for (const auto& v : prior.vertices) cloud.push_back(v + Vec3(noise(rng), noise(rng), noise(rng)) + Vec3(0, 0, 1e-2));
    for (auto& v : prior.vertices) v += Vec3(noise(rng), noise(rng), noise(rng));
    obs.clouds = {cloud};
    obs.priors = {prior};
    const auto [set, deltas] = refresh_correspondences(scene, obs, {});
    const auto layout = VariableLayout::build(scene, {}, {});
    const VectorXd z = layout.pack(scene);
    auto residual = [&](const VectorXd& v) {
      SceneModel t = scene;
      layout.unpack(v, t);
      return evaluate_objective(t, set, layout).residual;
    };
    const auto e = evaluate_objective(scene, set, layout);
    s.worst = std::max(s.worst, relative_error(e.dense_jacobian(layout.size()), numerical_jacobian(residual, z, o.step, o.richardson)));
    auto value = [&](const VectorXd& v) {
      SceneModel t = scene;
      layout.unpack(v, t);
      return VectorXd::Constant(1, objective_value(t, set));
    };
    const VectorXd grad = 2.0 * e.jtr(layout.size());
    s.worst = std::max(s.worst, relative_error(grad.transpose(), numerical_jacobian(value, z, o.step, o.richardson)));
    ++s.cases;
  }
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

inline std::vector<GradcheckSuite> run_gradcheck(const GradcheckOptions& o) {
  return {check_rotation(o), check_gravity(o), check_contact_gradient(o), check_contact_hessian(o),
          check_constraints(o), check_objective(o)};
}

}  // namespace scenefit
