#pragma once

#include <Eigen/Geometry>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "scenefit/contact.hpp"
#include "scenefit/error.hpp"
#include "scenefit/geometry.hpp"
#include "scenefit/objective.hpp"
#include "scenefit/solver.hpp"

namespace scenefit {


struct ObservationConfig {
  Vec3 view = Vec3(0.3, -0.4, -1.0);
  int points_per_body = 400;
  double noise = 1e-3;
  int prior_subdivisions = 1;
  double prior_jitter = 1e-3;
  bool full_visibility = false;
};

struct PerturbationConfig {
  double rotation_sigma = 0.0;
  double translation_sigma = 0.0;
  double vertex_sigma = 0.0;
  double lift = 0.0;  // z offset of every dynamic body; negative pushes into supports
};

inline BodyFrameHull box_hull(const Vec3& lo, const Vec3& hi) {
  BodyFrameHull h;
  for (int i = 0; i < 8; ++i)
    h.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  return h;
}

/// Builds a body from world-frame hulls; the frame origin is the vertex centroid.
inline RigidBody body_from_world_hulls(std::string name, std::vector<BodyFrameHull> hulls, bool is_static = false) {
  Vec3 c = Vec3::Zero();
  int n = 0;
  for (const auto& h : hulls)
    for (const auto& v : h.vertices) {
      c += v;
      ++n;
    }
  c /= n;
  for (auto& h : hulls)
    for (auto& v : h.vertices) v -= c;
  RigidBody b;
  b.name = std::move(name);
  b.hulls = std::move(hulls);
  b.pose.t = c;
  b.is_static = is_static;
  return b;
}

namespace detail {

inline constexpr double kRestGap = 2e-4;

inline RigidBody table() {
  return body_from_world_hulls("table", {box_hull(Vec3(-0.5, -0.5, -0.05), Vec3(0.5, 0.5, 0.0))}, true);
}

/// 2x2 grid of square columns of the given heights standing on corner.z().
inline std::vector<BodyFrameHull> columns(const Vec3& corner, double w, const std::array<double, 4>& heights) {
  std::vector<BodyFrameHull> out;
  for (int k = 0; k < 4; ++k) {
    const Vec3 lo = corner + Vec3((k & 1) * w, (k >> 1) * w, 0.0);
    out.push_back(box_hull(lo, lo + Vec3(w, w, heights[k])));
  }
  return out;
}

inline SceneModel layout(const std::string& name) {
  const double g = kRestGap;
  SceneModel s;
  if (name == "box_on_table") {
    s.bodies = {table(), body_from_world_hulls("box", {box_hull(Vec3(-0.05, -0.05, g), Vec3(0.05, 0.05, 0.1 + g))})};
  } else if (name == "stack3") {
    s.bodies = {table(),
                body_from_world_hulls("bottom", {box_hull(Vec3(-0.06, -0.06, g), Vec3(0.06, 0.06, 0.12 + g))}),
                body_from_world_hulls("middle", {box_hull(Vec3(-0.045, -0.05, 0.12 + 2 * g), Vec3(0.055, 0.05, 0.22 + 2 * g))}),
                body_from_world_hulls("top", {box_hull(Vec3(-0.04, -0.035, 0.22 + 3 * g), Vec3(0.04, 0.045, 0.30 + 3 * g))})};
  } else if (name == "lean") {
    // Box resting in a right-angled groove formed by two static slabs.
    const double r = 1.0 / std::sqrt(2.0);
    auto slab = [&](const Vec3& along, const Vec3& up) {
      BodyFrameHull h;
      for (double u : {0.0, 0.3})
        for (double v : {-0.15, 0.15})
          for (double w : {0.0, 0.02}) h.vertices.push_back(u * along + Vec3(0, v, 0) - w * up);
      return h;
    };
    s.bodies = {body_from_world_hulls("left", {slab(Vec3(-r, 0, r), Vec3(r, 0, r))}, true),
                body_from_world_hulls("right", {slab(Vec3(r, 0, r), Vec3(-r, 0, r))}, true)};
    RigidBody box = body_from_world_hulls("box", {box_hull(Vec3::Constant(-0.04), Vec3::Constant(0.04))});
    box.pose.theta = Vec3(0.0, std::acos(-1.0) / 4.0, 0.0);
    box.pose.t = Vec3(0.0, 0.0, std::sqrt(2.0) * (0.04 + g));
    s.bodies.push_back(box);
  } else if (name == "chair_box") {
    s.bodies = {table(),
                body_from_world_hulls("chair", {box_hull(Vec3(-0.2, -0.2, 0.40 + g), Vec3(0.2, 0.2, 0.44 + g)),
                                                box_hull(Vec3(0.16, -0.2, 0.44 + g), Vec3(0.2, 0.2, 0.8 + g)),
                                                box_hull(Vec3(-0.2, -0.2, g), Vec3(-0.16, 0.2, 0.40 + g)),
                                                box_hull(Vec3(0.16, -0.2, g), Vec3(0.2, 0.2, 0.40 + g))}),
                body_from_world_hulls("box", {box_hull(Vec3(-0.1, -0.06, 0.44 + 2 * g), Vec3(0.02, 0.06, 0.56 + 2 * g))})};
  } else if (name == "clutter5") {
    s.bodies = {table()};
    const std::array<std::array<double, 4>, 4> heights{{{0.05, 0.05, 0.05, 0.05},
                                                         {0.04, 0.07, 0.05, 0.09},
                                                         {0.08, 0.03, 0.03, 0.06},
                                                         {0.06, 0.06, 0.10, 0.04}}};
    const std::array<double, 4> xs{-0.3, -0.1, 0.1, 0.3};
    for (int i = 0; i < 4; ++i)
      s.bodies.push_back(body_from_world_hulls("object" + std::to_string(i),
                                               columns(Vec3(xs[i] - 0.04, -0.04, g), 0.04, heights[i])));
    s.bodies.push_back(body_from_world_hulls("object4", columns(Vec3(-0.325, -0.025, 0.05 + 2 * g), 0.025,
                                                                {0.03, 0.03, 0.03, 0.03})));
  } else {
    throw Error(ErrorCode::kUnknownScene, "unknown scene '" + name + "'");
  }
  return s;
}

}  // namespace detail

inline std::vector<std::string> builtin_scene_names() { return {"box_on_table", "stack3", "lean", "chair_box", "clutter5"}; }

struct Equilibrium {
  double residual = 0.0;                   // max of |C_eq|_inf and |C_ineq|_inf
  std::vector<std::vector<Vec3>> friction;  // per enumerated hull pair, per vertex
};

/// Settles every dynamic body with fixed shapes: poses and tangential forces are
/// solved by the ALM with no objective terms.
inline Equilibrium equilibrate(SceneModel& scene, const PhysicsConfig& physics = {}, double tolerance = 5e-5) {
  EstimationConfig cfg;
  cfg.physics = physics;
  cfg.options.optimize_shape = false;
  cfg.alm.eps_c = tolerance;
  cfg.alm.max_outer = 40;
  cfg.alm.kkt_patience = 40;
  cfg.alm.damping_floor = 1e-3;
  const auto res = alm_optimize(scene, Observation{}, cfg);
  scene = res.scene;
  Equilibrium eq;
  eq.residual = std::max(res.eq_norm, res.ineq_norm);
  for (std::size_t p = 0; p < res.pairs.size(); ++p) {
    std::vector<Vec3> f(res.layout.pair_vertices[p]);
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = res.z.segment<3>(res.layout.pair_f[p] + 3 * k);
    eq.friction.push_back(std::move(f));
  }
  if (!res.converged)
    throw Error(ErrorCode::kInfeasibleState, "equilibration stopped (" + res.termination + ") at residual " + std::to_string(eq.residual));
  return eq;
}

/// Boundary of the union of a body's hulls as a world-frame triangle soup:
/// each hull boundary is subdivided and triangles buried inside a sibling hull are dropped.
inline TriangulatedBoundary reference_mesh(const RigidBody& body, int subdivisions = 0) {
  const auto u = UnionBoundary::of(body);
  TriangulatedBoundary out;
  for (std::size_t j = 0; j < u.hulls.size(); ++j) {
    std::vector<Vec3> verts = u.hulls[j].vertices;
    std::vector<std::array<int, 3>> tris = u.hulls[j].triangles;
    for (int level = 0; level < subdivisions; ++level) {
      std::map<std::pair<int, int>, int> mid;
      auto midpoint = [&](int a, int b) {
        const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
        auto it = mid.find(key);
        if (it != mid.end()) return it->second;
        verts.push_back(0.5 * (verts[a] + verts[b]));
        return mid[key] = static_cast<int>(verts.size()) - 1;
      };
      std::vector<std::array<int, 3>> next;
      for (const auto& t : tris) {
        const int ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
        next.push_back({t[0], ab, ca});
        next.push_back({ab, t[1], bc});
        next.push_back({ca, bc, t[2]});
        next.push_back({ab, bc, ca});
      }
      tris = std::move(next);
    }
    std::vector<int> remap(verts.size(), -1);
    for (const auto& t : tris) {
      const Vec3 c = (verts[t[0]] + verts[t[1]] + verts[t[2]]) / 3.0;
      bool buried = false;
      for (std::size_t s = 0; s < u.hulls.size() && !buried; ++s)
        buried = s != j && u.half_spaces[s].signed_distance_bound(c) < -1e-9;
      if (buried) continue;
      std::array<int, 3> mapped;
      for (int m = 0; m < 3; ++m) {
        if (remap[t[m]] < 0) {
          remap[t[m]] = static_cast<int>(out.vertices.size());
          out.vertices.push_back(verts[t[m]]);
        }
        mapped[m] = remap[t[m]];
      }
      out.triangles.push_back(mapped);
    }
  }
  return out;
}

/// Area-uniform samples on the union boundary; with a view direction, only
/// facets whose outward normal faces the viewer are kept.
inline std::vector<Vec3> sample_union_surface(const RigidBody& body, int count, std::mt19937_64& rng,
                                              const std::optional<Vec3>& view = std::nullopt) {
  const auto u = UnionBoundary::of(body);
  struct Facet {
    int hull;
    Vec3 a, b, c;
  };
  std::vector<Facet> facets;
  std::vector<double> areas;
  for (std::size_t j = 0; j < u.hulls.size(); ++j)
    for (const auto& t : u.hulls[j].triangles) {
      Facet f{static_cast<int>(j), u.hulls[j].vertices[t[0]], u.hulls[j].vertices[t[1]], u.hulls[j].vertices[t[2]]};
      const Vec3 nrm = (f.b - f.a).cross(f.c - f.a);
      if (view && nrm.dot(-*view) <= 0.0) continue;
      facets.push_back(f);
      areas.push_back(0.5 * nrm.norm());
    }
  std::vector<Vec3> out;
  if (facets.empty() || count <= 0) return out;
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long long max_attempts = 1000LL * count;
  for (long long attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < count; ++attempt) {
    const Facet& f = facets[pick(rng)];
    double r1 = unit(rng), r2 = unit(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const Vec3 p = f.a + r1 * (f.b - f.a) + r2 * (f.c - f.a);
    bool buried = false;
    for (std::size_t s = 0; s < u.hulls.size() && !buried; ++s)
      buried = static_cast<int>(s) != f.hull && u.half_spaces[s].signed_distance_bound(p) < -1e-12;
    if (!buried) out.push_back(p);
  }
  return out;
}

inline Observation synthesize_observation(const SceneModel& scene, const ObservationConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Observation obs;
  obs.clouds.resize(scene.bodies.size());
  obs.priors.resize(scene.bodies.size());
  const Vec3 view = cfg.view.normalized();
  for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
    const auto& b = scene.bodies[i];
    if (b.is_static) continue;
    auto pts = sample_union_surface(b, cfg.points_per_body, rng,
                                    cfg.full_visibility ? std::nullopt : std::optional<Vec3>(view));
    for (auto& p : pts) p += cfg.noise * Vec3(noise(rng), noise(rng), noise(rng));
    obs.clouds[i] = std::move(pts);
    auto prior = reference_mesh(b, cfg.prior_subdivisions);
    for (auto& v : prior.vertices) v += cfg.prior_jitter * Vec3(noise(rng), noise(rng), noise(rng));
    obs.priors[i] = std::move(prior);
  }
  return obs;
}

/// Axis-angle vector of a rotation matrix.
inline Vec3 rotation_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

inline SceneModel perturb_initial(const SceneModel& scene, const PerturbationConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  SceneModel out = scene;
  for (auto& b : out.bodies) {
    if (b.is_static) continue;
    b.vertex_mass.reset();
    const Vec3 dr(n(rng), n(rng), n(rng)), dt(n(rng), n(rng), n(rng));
    if (cfg.rotation_sigma > 0.0) b.pose.theta = rotation_log(rodrigues(cfg.rotation_sigma * dr) * b.pose.rotation());
    b.pose.t += cfg.translation_sigma * dt + Vec3(0.0, 0.0, cfg.lift);
    for (auto& h : b.hulls)
      for (auto& v : h.vertices) {
        const Vec3 dv(n(rng), n(rng), n(rng));
        v += cfg.vertex_sigma * dv;
      }
  }
  return out;
}

struct ShrinkResult {
  SceneModel scene;
  std::vector<double> factors;  // per body, 1 when untouched
};

namespace detail {

inline Vec3 vertex_centroid(const RigidBody& b) {
  Vec3 c = Vec3::Zero();
  int n = 0;
  for (const auto& h : b.hulls)
    for (const auto& v : h.vertices) {
      c += v;
      ++n;
    }
  return c / n;
}

inline RigidBody scaled(const RigidBody& b, double s) {
  RigidBody out = b;
  const Vec3 c = vertex_centroid(b);
  for (auto& h : out.hulls)
    for (auto& v : h.vertices) v = c + s * (v - c);
  return out;
}

inline double body_gap(const RigidBody& a, const RigidBody& b) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < a.hulls.size(); ++j)
    for (std::size_t k = 0; k < b.hulls.size(); ++k)
      gap = std::min(gap, hull_distance(world_vertices(a, j), world_vertices(b, k)).distance);
  return gap;
}

}  // namespace detail

inline constexpr double kTouchingGap = 1e-9;

/// Shrinks touching or overlapping bodies about their vertex centroids until
/// their hulls are at least `margin` apart. Each conflict is settled by bisection on a common
/// factor for the dynamic bodies involved; poses never change.
inline ShrinkResult resolve_penetration(const SceneModel& scene, double margin = 1e-5, double precision = 1e-4) {
  ShrinkResult res{scene, std::vector<double>(scene.bodies.size(), 1.0)};
  auto& bodies = res.scene.bodies;
  const std::size_t nb = bodies.size();
  for (int round = 0; round < 50; ++round) {
    bool clean = true;
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t k = i + 1; k < nb; ++k) {
        if (bodies[i].is_static && bodies[k].is_static) continue;
        if (detail::body_gap(bodies[i], bodies[k]) > kTouchingGap) continue;
        clean = false;
        const RigidBody bi = bodies[i], bk = bodies[k];
        auto apply = [&](double s) {
          return std::pair{bi.is_static ? bi : detail::scaled(bi, s), bk.is_static ? bk : detail::scaled(bk, s)};
        };
        auto feasible = [&](double s) {
          const auto [a, b] = apply(s);
          return detail::body_gap(a, b) >= margin;
        };
        double lo = 0.0, hi = 1.0;
        if (!bi.is_static) lo = std::max(lo, 0.5 / res.factors[i]);
        if (!bk.is_static) lo = std::max(lo, 0.5 / res.factors[k]);
        if (lo >= 1.0 || !feasible(lo)) throw Error(ErrorCode::kShrinkFailed, "bodies '" + bi.name + "' and '" + bk.name + "' need a shrink below 0.5");
        while ((hi - lo) > precision * lo) {
          const double mid = 0.5 * (lo + hi);
          (feasible(mid) ? lo : hi) = mid;
        }
        const auto [a, b] = apply(lo);
        bodies[i] = a;
        bodies[k] = b;
        if (!bi.is_static) res.factors[i] *= lo;
        if (!bk.is_static) res.factors[k] *= lo;
      }
    if (clean) return res;
  }
  throw Error(ErrorCode::kShrinkFailed, "overlaps persist after repeated shrinking");
}

/// Symmetric chamfer distance between two bodies' union boundaries: the mean of
/// both directed mean closest-point distances over area-uniform samples.
inline double chamfer_distance(const RigidBody& a, const RigidBody& b, int samples = 2000, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  const auto ua = UnionBoundary::of(a), ub = UnionBoundary::of(b);
  auto directed = [&](const RigidBody& from, const UnionBoundary& to) {
    const auto pts = sample_union_surface(from, samples, rng);
    double sum = 0.0;
    for (const auto& p : pts) sum += closest_point_on_union_boundary(p, to).distance;
    return sum / static_cast<double>(pts.size());
  };
  return 0.5 * (directed(a, ub) + directed(b, ua));
}

/// Equilibrated scene plus world-frame reference meshes (empty for static bodies).
struct GroundTruthScene {
  SceneModel scene;
  std::vector<TriangulatedBoundary> meshes;
  Equilibrium equilibrium;
};

/// Deterministic built-in scene, settled before export.
inline GroundTruthScene builtin_scene(const std::string& name, const PhysicsConfig& physics = {}) {
  GroundTruthScene gt;
  gt.scene = detail::layout(name);
  gt.equilibrium = equilibrate(gt.scene, physics);
  for (const auto& b : gt.scene.bodies) gt.meshes.push_back(b.is_static ? TriangulatedBoundary{} : reference_mesh(b));
  return gt;
}

}  // namespace scenefit
