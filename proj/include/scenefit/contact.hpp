#pragma once

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "scenefit/error.hpp"
#include "scenefit/geometry.hpp"

namespace scenefit {

struct BarrierConfig {
  double mu = 5e-5;
  double inner_tolerance = 1e-10;
  int max_inner_iterations = 200;
  bool clamped = false;
  double clamp_distance = 1e-2;
  double fraction_to_boundary = 0.01;
};

/// One side of a contact pair; hull == kAllHulls aggregates every hull of the body.
struct PairSide {
  static constexpr int kAllHulls = -1;
  int body = 0;
  int hull = kAllHulls;

  bool operator==(const PairSide&) const = default;
};

struct ContactPair {
  PairSide a, b;
  std::optional<Vec4> plane;  // warm start, (n, d)
};

struct SideVertex {
  int body, hull, vertex;
};

/// Unordered body pairs i < i', skipping pairs of two static bodies.
inline std::vector<ContactPair> enumerate_pairs(const SceneModel& scene, bool aggregation) {
  std::vector<ContactPair> pairs;
  const int nb = static_cast<int>(scene.bodies.size());
  for (int i = 0; i < nb; ++i)
    for (int k = i + 1; k < nb; ++k) {
      if (scene.bodies[i].is_static && scene.bodies[k].is_static) continue;
      if (aggregation) {
        pairs.push_back({{i, PairSide::kAllHulls}, {k, PairSide::kAllHulls}, std::nullopt});
        continue;
      }
      for (int j = 0; j < static_cast<int>(scene.bodies[i].hulls.size()); ++j)
        for (int l = 0; l < static_cast<int>(scene.bodies[k].hulls.size()); ++l)
          pairs.push_back({{i, j}, {k, l}, std::nullopt});
    }
  return pairs;
}

inline std::vector<SideVertex> side_vertices(const SceneModel& scene, const PairSide& side) {
  std::vector<SideVertex> out;
  const auto& body = scene.bodies[side.body];
  const int first = side.hull == PairSide::kAllHulls ? 0 : side.hull;
  const int last = side.hull == PairSide::kAllHulls ? static_cast<int>(body.hulls.size()) : side.hull + 1;
  for (int j = first; j < last; ++j)
    for (int v = 0; v < static_cast<int>(body.hulls[j].vertices.size()); ++v) out.push_back({side.body, j, v});
  return out;
}

inline std::vector<Vec3> side_world_vertices(const SceneModel& scene, const PairSide& side) {
  std::vector<Vec3> out;
  const auto& body = scene.bodies[side.body];
  const Mat3 r = body.pose.rotation();
  for (const auto& sv : side_vertices(scene, side)) out.push_back(r * body.hulls[sv.hull].vertices[sv.vertex] + body.pose.t);
  return out;
}

namespace detail {

struct LogTerm {
  double value, d1, d2;
};

// Barrier on a strictly positive slack s.
inline LogTerm log_term(double s, const BarrierConfig& cfg) {
  if (!cfg.clamped) return {-std::log(s), -1.0 / s, 1.0 / (s * s)};
  const double sh = cfg.clamp_distance;
  if (s >= sh) return {0.0, 0.0, 0.0};
  const double e = s - sh, l = std::log(s / sh);
  return {-e * e * l, -2.0 * e * l - e * e / s, -2.0 * l - 4.0 * e / s + e * e / (s * s)};
}

struct NormTerm {
  double value;
  Vec3 grad;
  Mat3 hess;
};

inline NormTerm norm_term(const Vec3& n) {
  const double r = n.norm();
  NormTerm out{-std::log1p(-r), Vec3::Zero(), Mat3::Zero()};
  if (r < 1e-300) return out;
  const double c = 1.0 / (r * (1.0 - r));
  out.grad = c * n;
  out.hess = c * Mat3::Identity() - (1.0 - 2.0 * r) / (r * r * r * (1.0 - r) * (1.0 - r)) * n * n.transpose();
  return out;
}

// Slack of a vertex on side A (+) or B (-).
inline double slack(const Vec4& y, const Vec3& x, double sign) { return sign * (y.head<3>().dot(x) + y[3]); }

struct InnerModel {
  double value;
  Vec4 grad;
  Mat4 hess;
};

inline InnerModel inner_model(const Vec4& y, const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                              const BarrierConfig& cfg) {
  const auto nt = norm_term(y.head<3>());
  InnerModel m{nt.value, Vec4::Zero(), Mat4::Zero()};
  m.grad.head<3>() = nt.grad;
  m.hess.topLeftCorner<3, 3>() = nt.hess;
  auto add = [&](const std::vector<Vec3>& pts, double sign) {
    for (const auto& x : pts) {
      const auto t = log_term(slack(y, x, sign), cfg);
      const Vec4 av(x.x(), x.y(), x.z(), 1.0);
      m.value += t.value;
      m.grad += sign * t.d1 * av;
      m.hess += t.d2 * av * av.transpose();
    }
  };
  add(a, 1.0);
  add(b, -1.0);
  return m;
}

inline bool strictly_feasible(const Vec4& y, const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (!(y.head<3>().norm() < 1.0)) return false;
  for (const auto& x : a)
    if (!(slack(y, x, 1.0) > 0.0)) return false;
  for (const auto& x : b)
    if (!(slack(y, x, -1.0) > 0.0)) return false;
  return true;
}

}  // namespace detail

/// Barrier value at a fixed plane; +infinity when the plane is not strictly feasible.
inline double barrier_value(const Vec4& plane, const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                            const BarrierConfig& cfg = {}) {
  if (!detail::strictly_feasible(plane, a, b)) return std::numeric_limits<double>::infinity();
  double v = -std::log1p(-plane.head<3>().norm());
  for (const auto& x : a) v += detail::log_term(detail::slack(plane, x, 1.0), cfg).value;
  for (const auto& x : b) v += detail::log_term(detail::slack(plane, x, -1.0), cfg).value;
  return v;
}

struct HullDistance {
  double distance;
  Vec3 point_a, point_b;
};

/// Distance between conv(a) and conv(b) by Wolfe's minimum-norm-point algorithm
/// on the Minkowski difference.
inline HullDistance hull_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  struct Atom {
    int ia, ib;
    Vec3 p;
  };
  auto lmo = [&](const Vec3& w) {
    int ia = 0, ib = 0;
    for (int i = 1; i < static_cast<int>(a.size()); ++i)
      if (a[i].dot(w) < a[ia].dot(w)) ia = i;
    for (int i = 1; i < static_cast<int>(b.size()); ++i)
      if (b[i].dot(w) > b[ib].dot(w)) ib = i;
    return Atom{ia, ib, a[ia] - b[ib]};
  };
  double scale = 0.0;
  for (const auto& p : a) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  for (const auto& p : b) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  scale = std::max(scale, 1e-300);

  std::vector<Atom> corral{Atom{0, 0, a[0] - b[0]}};
  std::vector<double> lambda{1.0};
  Vec3 x = corral[0].p;
  for (int major = 0; major < 1000; ++major) {
    const Atom q = lmo(x);
    if (x.squaredNorm() - x.dot(q.p) <= 1e-14 * scale * scale) break;
    if (x.squaredNorm() <= 1e-28 * scale * scale) break;
    bool duplicate = false;
    for (const auto& c : corral) duplicate |= (c.ia == q.ia && c.ib == q.ib);
    if (duplicate) break;
    corral.push_back(q);
    lambda.push_back(0.0);
    for (int minor = 0; minor < 100; ++minor) {
      const int m = static_cast<int>(corral.size());
      MatrixXd sys = MatrixXd::Zero(m + 1, m + 1);
      VectorXd rhs = VectorXd::Zero(m + 1);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) sys(i, j) = corral[i].p.dot(corral[j].p);
        sys(i, m) = sys(m, i) = 1.0;
      }
      rhs[m] = 1.0;
      const VectorXd sol = sys.fullPivLu().solve(rhs);
      const VectorXd alpha = sol.head(m);
      if (alpha.minCoeff() > 1e-14) {
        lambda.assign(alpha.data(), alpha.data() + m);
        break;
      }
      double theta = 1.0;
      for (int i = 0; i < m; ++i)
        if (alpha[i] <= 1e-14) theta = std::min(theta, lambda[i] / (lambda[i] - alpha[i]));
      for (int i = 0; i < m; ++i) lambda[i] = theta * alpha[i] + (1.0 - theta) * lambda[i];
      std::vector<Atom> kept;
      std::vector<double> kept_lambda;
      for (int i = 0; i < m; ++i)
        if (lambda[i] > 1e-14) {
          kept.push_back(corral[i]);
          kept_lambda.push_back(lambda[i]);
        }
      corral = std::move(kept);
      lambda = std::move(kept_lambda);
      double total = 0.0;
      for (double l : lambda) total += l;
      for (double& l : lambda) l /= total;
    }
    x.setZero();
    for (std::size_t i = 0; i < corral.size(); ++i) x += lambda[i] * corral[i].p;
  }
  HullDistance out{x.norm(), Vec3::Zero(), Vec3::Zero()};
  for (std::size_t i = 0; i < corral.size(); ++i) {
    out.point_a += lambda[i] * a[corral[i].ia];
    out.point_b += lambda[i] * b[corral[i].ib];
  }
  return out;
}

/// Mid-plane between the closest points, normal scaled to half length; nullopt if the hulls touch.
inline std::optional<Vec4> max_margin_plane(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  const auto hd = hull_distance(a, b);
  if (hd.distance <= 0.0) return std::nullopt;
  const Vec3 nh = (hd.point_a - hd.point_b) / hd.distance;
  const Vec3 mid = 0.5 * (hd.point_a + hd.point_b);
  Vec4 y;
  y << 0.5 * nh, -0.5 * nh.dot(mid);
  if (!detail::strictly_feasible(y, a, b)) return std::nullopt;
  return y;
}

struct PlaneSolve {
  Vec4 plane;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Minimizes the barrier over (n, d); nullopt when no strictly feasible plane exists.
inline std::optional<PlaneSolve> try_solve_separating_plane(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                                                            const BarrierConfig& cfg,
                                                            const std::optional<Vec4>& warm = std::nullopt) {
  Vec4 y;
  if (warm && detail::strictly_feasible(*warm, a, b)) {
    y = *warm;
  } else {
    const auto init = max_margin_plane(a, b);
    if (!init) return std::nullopt;
    y = *init;
  }
  PlaneSolve out{y, 0, 0.0};
  auto m = detail::inner_model(y, a, b, cfg);
  for (; out.iterations < cfg.max_inner_iterations; ++out.iterations) {
    out.gradient_norm = m.grad.norm();
    if (out.gradient_norm <= cfg.inner_tolerance) break;
    Eigen::LLT<Mat4> llt(m.hess);
    Vec4 dy;
    if (llt.info() == Eigen::Success) {
      dy = -llt.solve(m.grad);
    } else {
      const double shift = 1e-12 * std::max(1.0, m.hess.diagonal().cwiseAbs().maxCoeff());
      dy = -(m.hess + shift * Mat4::Identity()).ldlt().solve(m.grad);
    }
    // Fraction to boundary on the linear slacks, then on the norm term.
    double alpha = 1.0;
    auto limit = [&](const std::vector<Vec3>& pts, double sign) {
      for (const auto& x : pts) {
        const double s = detail::slack(y, x, sign), ds = detail::slack(dy, x, sign);
        if (ds < 0.0) alpha = std::min(alpha, (1.0 - cfg.fraction_to_boundary) * s / -ds);
      }
    };
    limit(a, 1.0);
    limit(b, -1.0);
    const double room = 1.0 - y.head<3>().norm();
    while (alpha > 1e-16 && 1.0 - (y.head<3>() + alpha * dy.head<3>()).norm() < cfg.fraction_to_boundary * room) alpha *= 0.5;

    const double decrement = -m.grad.dot(dy);
    bool accepted = false;
    for (; alpha > 1e-16; alpha *= 0.5) {
      const Vec4 trial = y + alpha * dy;
      if (!detail::strictly_feasible(trial, a, b)) continue;
      auto mt = detail::inner_model(trial, a, b, cfg);
      if (mt.value <= m.value - 1e-4 * alpha * decrement || (alpha == 1.0 && mt.grad.norm() < m.grad.norm())) {
        y = trial;
        m = mt;
        accepted = true;
        break;
      }
    }
    // Round-off floor: no measurable decrease remains.
    if (!accepted || decrement <= 1e-15 * std::max(1.0, std::abs(m.value))) {
      out.gradient_norm = m.grad.norm();
      ++out.iterations;
      break;
    }
  }
  out.plane = y;
  return out;
}

inline PlaneSolve solve_separating_plane(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                                         const BarrierConfig& cfg, const std::optional<Vec4>& warm = std::nullopt) {
  auto res = try_solve_separating_plane(a, b, cfg, warm);
  if (!res) throw Error(ErrorCode::kInfeasiblePair, "hulls intersect; no separating plane");
  return *res;
}

/// Pair potential with the plane eliminated. Columns order the world vertices
/// of side A then side B, three coordinates each.
struct CollisionPotential {
  double value = 0.0;
  Vec4 plane = Vec4::Zero();
  VectorXd gradient;
  MatrixXd hessian;
  MatrixXd dplane_dX;  // 4 x 3V
  int inner_iterations = 0;
  double inner_gradient_norm = 0.0;
};

inline CollisionPotential collision_potential(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                                              const BarrierConfig& cfg,
                                              const std::optional<Vec4>& warm = std::nullopt) {
  const auto ps = solve_separating_plane(a, b, cfg, warm);
  const Vec4& y = ps.plane;
  const Vec3 n = y.head<3>();
  const int na = static_cast<int>(a.size()), nv = na + static_cast<int>(b.size());

  CollisionPotential out;
  out.plane = y;
  out.inner_iterations = ps.iterations;
  out.inner_gradient_norm = ps.gradient_norm;
  out.gradient = VectorXd::Zero(3 * nv);
  out.hessian = MatrixXd::Zero(3 * nv, 3 * nv);
  MatrixXd cross = MatrixXd::Zero(3 * nv, 4);
  const auto model = detail::inner_model(y, a, b, cfg);
  out.value = model.value;
  for (int k = 0; k < nv; ++k) {
    const double sign = k < na ? 1.0 : -1.0;
    const Vec3& x = k < na ? a[k] : b[k - na];
    const auto t = detail::log_term(detail::slack(y, x, sign), cfg);
    const Vec4 av(x.x(), x.y(), x.z(), 1.0);
    out.gradient.segment<3>(3 * k) = sign * t.d1 * n;
    out.hessian.block<3, 3>(3 * k, 3 * k) = t.d2 * n * n.transpose();
    cross.block<3, 4>(3 * k, 0) = t.d2 * n * av.transpose();
    cross.block<3, 3>(3 * k, 0) += sign * t.d1 * Mat3::Identity();
  }
  Eigen::LDLT<Mat4> ldlt(model.hess);
  if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) {
    // Only possible for the clamped barrier with every vertex term inactive;
    // the potential is then locally independent of X.
    if (cross.cwiseAbs().maxCoeff() > 0.0) throw Error(ErrorCode::kSingularSystem, "inner plane Hessian singular");
    out.dplane_dX = MatrixXd::Zero(4, 3 * nv);
    return out;
  }
  out.dplane_dX = -ldlt.solve(cross.transpose());
  out.hessian.noalias() += cross * out.dplane_dX;
  return out;
}

/// mu * dPsi/dX per vertex, in the same order as the potential's columns.
inline std::vector<Vec3> normal_forces(const CollisionPotential& cp, double mu) {
  std::vector<Vec3> f(cp.gradient.size() / 3);
  for (std::size_t k = 0; k < f.size(); ++k) f[k] = mu * cp.gradient.segment<3>(3 * k);
  return f;
}

}  // namespace scenefit
