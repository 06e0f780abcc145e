#pragma once

// Rigid-body scene representation, the axis-angle pose chart, and the
// closest-point queries used by the visual objective.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "scenefit/error.hpp"

namespace scenefit {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Coplanarity tolerance for hulls, in meters.
inline constexpr double kHullDegeneracyTolerance = 1e-9;

inline Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

namespace detail {

// R = I + A(s) K + B(s) K^2 with K = [theta]x and s = |theta|^2. Both
// coefficients are smooth in s; derivatives are taken with respect to s.
struct RodriguesCoefficients {
  double a = 0, da = 0, d2a = 0;
  double b = 0, db = 0, d2b = 0;
};

inline constexpr double kRodriguesSeriesSwitch = 0.25;  // on s = |theta|^2

inline RodriguesCoefficients rodrigues_coefficients(double s) {
  RodriguesCoefficients c;
  if (s < kRodriguesSeriesSwitch) {
    // A = sum (-1)^n s^n / (2n+1)!,  B = sum (-1)^n s^n / (2n+2)!
    double fact_odd = 1.0;   // (2n+1)!
    double fact_even = 2.0;  // (2n+2)!
    for (int n = 0; n < 10; ++n) {
      if (n > 0) {
        fact_odd *= (2.0 * n) * (2.0 * n + 1.0);
        fact_even *= (2.0 * n + 1.0) * (2.0 * n + 2.0);
      }
      const double sign = (n % 2 == 0) ? 1.0 : -1.0;
      const double ca = sign / fact_odd;
      const double cb = sign / fact_even;
      const double sn = std::pow(s, n);
      c.a += ca * sn;
      c.b += cb * sn;
      if (n >= 1) {
        const double sn1 = std::pow(s, n - 1);
        c.da += ca * n * sn1;
        c.db += cb * n * sn1;
      }
      if (n >= 2) {
        const double sn2 = std::pow(s, n - 2);
        c.d2a += ca * n * (n - 1) * sn2;
        c.d2b += cb * n * (n - 1) * sn2;
      }
    }
    return c;
  }
  const double a = std::sqrt(s);
  const double sa = std::sin(a);
  const double ca = std::cos(a);
  const double a2 = s, a3 = s * a, a4 = s * s, a5 = a4 * a, a6 = a4 * s;
  c.a = sa / a;
  c.da = (a * ca - sa) / (2.0 * a3);
  c.d2a = -sa / (4.0 * a3) - 3.0 * (a * ca - sa) / (4.0 * a5);
  c.b = (1.0 - ca) / a2;
  c.db = sa / (2.0 * a3) - (1.0 - ca) / a4;
  c.d2b = ca / (4.0 * a4) - 5.0 * sa / (4.0 * a5) + 2.0 * (1.0 - ca) / a6;
  return c;
}

inline const std::array<Mat3, 3>& so3_generators() {
  static const std::array<Mat3, 3> gens = {cross_matrix(Vec3::UnitX()), cross_matrix(Vec3::UnitY()),
                                           cross_matrix(Vec3::UnitZ())};
  return gens;
}

}  // namespace detail

/// Rotation R(theta) = exp([theta]x) together with its first and second
/// partial derivatives with respect to the axis-angle components.
struct RotationDerivatives {
  Mat3 rotation;
  std::array<Mat3, 3> first;                  // dR/dtheta_a
  std::array<std::array<Mat3, 3>, 3> second;  // d2R/dtheta_a dtheta_b
};

inline Mat3 rodrigues(const Vec3& theta) {
  const auto c = detail::rodrigues_coefficients(theta.squaredNorm());
  const Mat3 k = cross_matrix(theta);
  return Mat3::Identity() + c.a * k + c.b * k * k;
}

inline RotationDerivatives rodrigues_derivatives(const Vec3& theta) {
  const auto c = detail::rodrigues_coefficients(theta.squaredNorm());
  const auto& gen = detail::so3_generators();
  const Mat3 k = cross_matrix(theta);
  const Mat3 k2 = k * k;

  RotationDerivatives out;
  out.rotation = Mat3::Identity() + c.a * k + c.b * k2;
  std::array<Mat3, 3> kk;  // K_a K + K K_a
  for (int a = 0; a < 3; ++a) {
    kk[a] = gen[a] * k + k * gen[a];
    out.first[a] = 2.0 * theta[a] * (c.da * k + c.db * k2) + c.a * gen[a] + c.b * kk[a];
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b) {
      const double tt = 4.0 * theta[a] * theta[b];
      Mat3 m = tt * (c.d2a * k + c.d2b * k2);
      m += 2.0 * c.da * (theta[a] * gen[b] + theta[b] * gen[a]);
      m += 2.0 * c.db * (theta[a] * kk[b] + theta[b] * kk[a]);
      m += c.b * (gen[a] * gen[b] + gen[b] * gen[a]);
      if (a == b) m += 2.0 * (c.da * k + c.db * k2);
      out.second[a][b] = m;
      out.second[b][a] = m;
    }
  }
  return out;
}

struct Pose {
  Vec3 theta = Vec3::Zero();
  Vec3 t = Vec3::Zero();

  Mat3 rotation() const { return rodrigues(theta); }
  Vec3 apply(const Vec3& x) const { return rotation() * x + t; }

  /// Moves theta back into the |theta| < pi chart. Only valid between solves:
  /// the map is discontinuous in theta.
  void canonicalize() {
    const double angle = theta.norm();
    if (angle >= std::numbers::pi) theta *= 1.0 - 2.0 * std::numbers::pi / angle;
  }
};

/// World position of a body-frame vertex and its Jacobians.
struct VertexTransform {
  Vec3 world;
  Mat3 d_theta;  // column a = dR/dtheta_a * x
  Mat3 d_t;      // identity
  Mat3 d_x;      // R
};

inline VertexTransform transform_vertex(const RotationDerivatives& rot, const Vec3& t, const Vec3& x) {
  VertexTransform out;
  out.world = rot.rotation * x + t;
  for (int a = 0; a < 3; ++a) out.d_theta.col(a) = rot.first[a] * x;
  out.d_t.setIdentity();
  out.d_x = rot.rotation;
  return out;
}

inline VertexTransform transform_vertex(const Pose& pose, const Vec3& x) {
  return transform_vertex(rodrigues_derivatives(pose.theta), pose.t, x);
}

struct BodyFrameHull {
  std::vector<Vec3> vertices;
};

struct RigidBody {
  std::string name;
  std::vector<BodyFrameHull> hulls;
  Pose pose;
  double mass_density = 800.0;  // kg/m^3
  bool is_static = false;
  /// Lumped per-vertex mass override; derived from density and volume when absent.
  std::optional<double> vertex_mass;

  std::size_t vertex_count() const {
    std::size_t n = 0;
    for (const auto& h : hulls) n += h.vertices.size();
    return n;
  }
};

struct SceneModel {
  std::vector<RigidBody> bodies;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);

  int dynamic_body_count() const {
    return static_cast<int>(std::count_if(bodies.begin(), bodies.end(), [](const RigidBody& b) { return !b.is_static; }));
  }

  void validate() const {
    if (dynamic_body_count() == 0) throw Error(ErrorCode::kInvalidInput, "scene has no dynamic body");
    if (!gravity.allFinite()) throw Error(ErrorCode::kInvalidInput, "gravity is not finite");
    for (const auto& body : bodies) {
      if (body.hulls.empty()) throw Error(ErrorCode::kInvalidInput, "body '" + body.name + "' has no hulls");
      if (!(body.mass_density > 0.0)) throw Error(ErrorCode::kInvalidInput, "body '" + body.name + "' density must be > 0");
      if (!body.pose.theta.allFinite() || !body.pose.t.allFinite())
        throw Error(ErrorCode::kInvalidInput, "body '" + body.name + "' pose is not finite");
      for (const auto& hull : body.hulls) {
        if (hull.vertices.size() < 4)
          throw Error(ErrorCode::kDegenerateHull, "body '" + body.name + "' has a hull with fewer than 4 vertices");
        for (const auto& v : hull.vertices)
          if (!v.allFinite()) throw Error(ErrorCode::kInvalidInput, "non-finite vertex in body '" + body.name + "'");
      }
    }
  }
};

inline std::vector<Vec3> world_vertices(const RigidBody& body, std::size_t hull) {
  const Mat3 r = body.pose.rotation();
  std::vector<Vec3> out;
  out.reserve(body.hulls[hull].vertices.size());
  for (const auto& x : body.hulls[hull].vertices) out.push_back(r * x + body.pose.t);
  return out;
}

/// Closed triangle surface of one convex hull. Vertex i of the boundary is
/// vertex source_vertex[i] of hull hull_index (or -1 for meshes not backed by
/// a hull, such as loaded prior meshes).
struct TriangulatedBoundary {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  int hull_index = -1;
  std::vector<int> source_vertex;

  double area() const {
    double total = 0.0;
    for (const auto& t : triangles)
      total += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
    return total;
  }

  /// Enclosed volume by the divergence theorem; assumes outward orientation.
  double volume() const {
    double total = 0.0;
    for (const auto& t : triangles) total += vertices[t[0]].dot(vertices[t[1]].cross(vertices[t[2]]));
    return total / 6.0;
  }
};

namespace detail {

inline void check_not_coplanar(const std::vector<Vec3>& pts) {
  if (pts.size() < 4) throw Error(ErrorCode::kDegenerateHull, "fewer than 4 vertices");
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - centroid) * (p - centroid).transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 normal = eig.eigenvectors().col(0);
  double width = 0.0;
  for (const auto& p : pts) width = std::max(width, std::abs(normal.dot(p - centroid)));
  if (width <= kHullDegeneracyTolerance) throw Error(ErrorCode::kDegenerateHull, "vertices are coplanar");
}

// Convex hull of a 2-D point set (Andrew's monotone chain), counter-clockwise,
// collinear points dropped. Returns indices into pts.
inline std::vector<int> convex_hull_2d(const std::vector<Eigen::Vector2d>& pts) {
  std::vector<int> idx(pts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return pts[a].x() < pts[b].x() || (pts[a].x() == pts[b].x() && pts[a].y() < pts[b].y());
  });
  auto cross = [&](int o, int a, int b) {
    return (pts[a] - pts[o]).x() * (pts[b] - pts[o]).y() - (pts[a] - pts[o]).y() * (pts[b] - pts[o]).x();
  };
  std::vector<int> hull(2 * idx.size());
  std::size_t k = 0;
  for (int i : idx) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], i) <= 0) --k;
    hull[k++] = i;
  }
  for (std::size_t j = idx.size() - 1, lower = k + 1; j-- > 0;) {
    const int i = idx[j];
    while (k >= lower && cross(hull[k - 2], hull[k - 1], i) <= 0) --k;
    hull[k++] = i;
  }
  hull.resize(k > 1 ? k - 1 : k);
  return hull;
}

}  // namespace detail

/// Triangulated convex-hull boundary of a world-space point set. Facets with
/// more than three coplanar points are fan-triangulated over their extreme
/// points.
inline TriangulatedBoundary convex_boundary(const std::vector<Vec3>& pts) {
  detail::check_not_coplanar(pts);
  const int n = static_cast<int>(pts.size());
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= n;
  double scale = 0.0;
  for (const auto& p : pts) scale = std::max(scale, (p - centroid).norm());
  const double tol = std::max(kHullDegeneracyTolerance, 1e-12 * scale);

  TriangulatedBoundary out;
  out.vertices = pts;
  out.source_vertex.resize(pts.size());
  for (int i = 0; i < n; ++i) out.source_vertex[i] = i;

  std::map<std::vector<int>, bool> seen;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      for (int k = j + 1; k < n; ++k) {
        Vec3 normal = (pts[j] - pts[i]).cross(pts[k] - pts[i]);
        const double len = normal.norm();
        if (len <= 1e-12 * scale * scale) continue;
        normal /= len;
        double offset = normal.dot(pts[i]);
        if (normal.dot(centroid) > offset) {
          normal = -normal;
          offset = -offset;
        }
        std::vector<int> on_plane;
        bool supporting = true;
        for (int m = 0; m < n; ++m) {
          const double dist = normal.dot(pts[m]) - offset;
          if (dist > tol) {
            supporting = false;
            break;
          }
          if (dist >= -tol) on_plane.push_back(m);
        }
        if (!supporting) continue;
        if (!seen.emplace(on_plane, true).second) continue;

        // Project the facet points onto the plane and fan-triangulate their 2-D hull.
        const Vec3 u = (std::abs(normal.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(normal).normalized();
        const Vec3 v = normal.cross(u);
        std::vector<Eigen::Vector2d> flat;
        flat.reserve(on_plane.size());
        for (int m : on_plane) flat.emplace_back(u.dot(pts[m]), v.dot(pts[m]));
        const auto ring = detail::convex_hull_2d(flat);
        for (std::size_t r = 1; r + 1 < ring.size(); ++r) {
          // (u, v, normal) is right-handed, so counter-clockwise in 2-D is outward.
          out.triangles.push_back({on_plane[ring[0]], on_plane[ring[r]], on_plane[ring[r + 1]]});
        }
      }
    }
  }
  return out;
}

inline TriangulatedBoundary hull_boundary(const BodyFrameHull& hull, const Pose& pose) {
  const Mat3 r = pose.rotation();
  std::vector<Vec3> pts;
  pts.reserve(hull.vertices.size());
  for (const auto& x : hull.vertices) pts.push_back(r * x + pose.t);
  return convex_boundary(pts);
}

inline double hull_volume(const BodyFrameHull& hull) { return convex_boundary(hull.vertices).volume(); }

/// Closest point on triangle abc; barycentric weights are returned in bary.
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, Vec3& bary) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) {
    bary = Vec3(1, 0, 0);
    return a;
  }
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) {
    bary = Vec3(0, 1, 0);
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    bary = Vec3(1 - v, v, 0);
    return a + v * ab;
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) {
    bary = Vec3(0, 0, 1);
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    bary = Vec3(1 - w, 0, w);
    return a + w * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    bary = Vec3(0, 1 - w, w);
    return b + w * (c - b);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  bary = Vec3(1 - v - w, v, w);
  return a + ab * v + ac * w;
}

struct MeshClosestPoint {
  Vec3 point = Vec3::Zero();
  double distance = std::numeric_limits<double>::infinity();
  int mesh = -1;
  int triangle = -1;
  Vec3 barycentric = Vec3::Zero();
};

inline MeshClosestPoint closest_point_on_mesh(const Vec3& p, const TriangulatedBoundary& mesh) {
  MeshClosestPoint best;
  double best_sq = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    Vec3 bary;
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]], bary);
    const double d = (q - p).squaredNorm();
    if (d < best_sq) {
      best_sq = d;
      best.point = q;
      best.triangle = static_cast<int>(t);
      best.barycentric = bary;
    }
  }
  best.distance = std::sqrt(best_sq);
  best.mesh = 0;
  return best;
}

inline MeshClosestPoint closest_point_on_mesh(const Vec3& p, const std::vector<TriangulatedBoundary>& meshes) {
  MeshClosestPoint best;
  for (std::size_t m = 0; m < meshes.size(); ++m) {
    auto c = closest_point_on_mesh(p, meshes[m]);
    if (c.distance < best.distance) {
      best = c;
      best.mesh = static_cast<int>(m);
    }
  }
  return best;
}

/// Outward facet planes (unit normal, offset) of a convex boundary.
struct HalfSpaces {
  std::vector<Vec3> normals;
  std::vector<double> offsets;

  static HalfSpaces from(const TriangulatedBoundary& b) {
    HalfSpaces h;
    for (const auto& t : b.triangles) {
      Vec3 nrm = (b.vertices[t[1]] - b.vertices[t[0]]).cross(b.vertices[t[2]] - b.vertices[t[0]]);
      const double len = nrm.norm();
      if (len == 0.0) continue;
      nrm /= len;
      h.normals.push_back(nrm);
      h.offsets.push_back(nrm.dot(b.vertices[t[0]]));
    }
    return h;
  }

  /// Largest signed facet distance; negative means strictly inside.
  double signed_distance_bound(const Vec3& p) const {
    double d = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < normals.size(); ++i) d = std::max(d, normals[i].dot(p) - offsets[i]);
    return d;
  }
};

/// World-space boundaries of all hulls of a body, prepared for repeated
/// union-boundary queries.
struct UnionBoundary {
  std::vector<TriangulatedBoundary> hulls;
  std::vector<HalfSpaces> half_spaces;

  static UnionBoundary of(const RigidBody& body) {
    UnionBoundary u;
    for (std::size_t j = 0; j < body.hulls.size(); ++j) {
      auto b = hull_boundary(body.hulls[j], body.pose);
      b.hull_index = static_cast<int>(j);
      u.half_spaces.push_back(HalfSpaces::from(b));
      u.hulls.push_back(std::move(b));
    }
    return u;
  }
};

struct UnionClosestPoint {
  Vec3 point = Vec3::Zero();
  double distance = std::numeric_limits<double>::infinity();
  int hull = -1;
  std::array<int, 3> vertices{0, 0, 0};  // hull-local vertex indices
  Vec3 weights = Vec3::Zero();
};

/// Closest point on the boundary of the union of a body's hulls. Candidates
/// that fall strictly inside a sibling hull are rejected; if every candidate is
/// rejected, the least-violating one is returned.
inline UnionClosestPoint closest_point_on_union_boundary(const Vec3& p, const UnionBoundary& u) {
  constexpr double kInteriorTolerance = 1e-9;
  UnionClosestPoint best, fallback;
  double fallback_violation = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < u.hulls.size(); ++j) {
    const auto c = closest_point_on_mesh(p, u.hulls[j]);
    double violation = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < u.hulls.size(); ++s) {
      if (s == j) continue;
      violation = std::max(violation, -u.half_spaces[s].signed_distance_bound(c.point));
    }
    UnionClosestPoint cand;
    cand.point = c.point;
    cand.distance = c.distance;
    cand.hull = static_cast<int>(j);
    const auto& tri = u.hulls[j].triangles[c.triangle];
    for (int m = 0; m < 3; ++m) cand.vertices[m] = u.hulls[j].source_vertex[tri[m]];
    cand.weights = c.barycentric;
    if (violation <= kInteriorTolerance) {
      if (cand.distance < best.distance) best = cand;
    } else if (violation < fallback_violation) {
      fallback_violation = violation;
      fallback = cand;
    }
  }
  return best.hull >= 0 ? best : fallback;
}

inline UnionClosestPoint closest_point_on_union_boundary(const Vec3& p, const RigidBody& body) {
  return closest_point_on_union_boundary(p, UnionBoundary::of(body));
}

}  // namespace scenefit
