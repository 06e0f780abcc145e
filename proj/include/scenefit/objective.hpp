#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "scenefit/error.hpp"
#include "scenefit/geometry.hpp"
#include "scenefit/parallel.hpp"
#include "scenefit/physics.hpp"

namespace scenefit {

struct ObjectiveWeights {
  double hull_vertex = 2e-2;   // w1
  double cloud_point = 1e-1;   // w2
  double prior_vertex = 2e-2;  // w3
};

/// World-frame observations, indexed by body. Static bodies carry empty entries.
struct Observation {
  std::vector<std::vector<Vec3>> clouds;
  std::vector<TriangulatedBoundary> priors;
};

enum class TermType { kHullVertex, kCloudPoint, kPriorVertex };

/// One least-squares term w * |X - anchor|^2 where the moving point X is a
/// fixed convex combination of up to three vertices of one hull.
struct Correspondence {
  TermType type = TermType::kHullVertex;
  int body = 0;
  int source = 0;  // hull-vertex ordinal, cloud point index or prior vertex index
  Vec3 anchor = Vec3::Zero();
  int hull = 0;
  std::array<int, 3> vertices{0, 0, 0};
  Vec3 weights = Vec3(1, 0, 0);
  bool active = true;
};

struct TermDelta {
  std::size_t record;
  double delta;
};

struct CorrespondenceSet {
  std::vector<Correspondence> records;
  ObjectiveWeights weights;

  double weight(const Correspondence& c) const {
    switch (c.type) {
      case TermType::kHullVertex: return weights.hull_vertex;
      case TermType::kCloudPoint: return weights.cloud_point;
      case TermType::kPriorVertex: return weights.prior_vertex;
    }
    return 0.0;
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.active; }));
  }
};

inline Vec3 moving_point(const SceneModel& scene, const Correspondence& c) {
  const auto& b = scene.bodies[c.body];
  const Mat3 r = b.pose.rotation();
  Vec3 x = Vec3::Zero();
  for (int m = 0; m < 3; ++m)
    if (c.weights[m] != 0.0) x += c.weights[m] * (r * b.hulls[c.hull].vertices[c.vertices[m]] + b.pose.t);
  return x;
}

/// Recomputes every target: hull vertices to their closest prior-mesh point,
/// cloud points and prior vertices to the closest point on the body's union
/// boundary. Deltas compare the new term against the previous weights, both at
/// the current state; they are zero without a previous set.
inline std::pair<CorrespondenceSet, std::vector<TermDelta>> refresh_correspondences(
    const SceneModel& scene, const Observation& obs, const ObjectiveWeights& weights,
    const CorrespondenceSet* prev = nullptr, int threads = 1) {
  CorrespondenceSet set;
  set.weights = weights;
  // Record skeleton in a fixed order: per body, hull vertices, cloud points, prior vertices.
  for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
    const auto& b = scene.bodies[i];
    if (b.is_static) continue;
    int ordinal = 0;
    if (i < obs.priors.size() && !obs.priors[i].triangles.empty())
      for (std::size_t j = 0; j < b.hulls.size(); ++j)
        for (std::size_t v = 0; v < b.hulls[j].vertices.size(); ++v) {
          Correspondence c;
          c.type = TermType::kHullVertex;
          c.body = static_cast<int>(i);
          c.source = ordinal++;
          c.hull = static_cast<int>(j);
          c.vertices = {static_cast<int>(v), static_cast<int>(v), static_cast<int>(v)};
          set.records.push_back(c);
        }
    if (i < obs.clouds.size())
      for (std::size_t l = 0; l < obs.clouds[i].size(); ++l) {
        Correspondence c;
        c.type = TermType::kCloudPoint;
        c.body = static_cast<int>(i);
        c.source = static_cast<int>(l);
        c.anchor = obs.clouds[i][l];
        set.records.push_back(c);
      }
    if (i < obs.priors.size())
      for (std::size_t l = 0; l < obs.priors[i].vertices.size(); ++l) {
        Correspondence c;
        c.type = TermType::kPriorVertex;
        c.body = static_cast<int>(i);
        c.source = static_cast<int>(l);
        c.anchor = obs.priors[i].vertices[l];
        set.records.push_back(c);
      }
  }
  if (prev && prev->records.size() != set.records.size())
    throw Error(ErrorCode::kInvalidInput, "previous correspondence set does not match the observation");

  std::vector<UnionBoundary> unions(scene.bodies.size());
  parallel_for(scene.bodies.size(), threads, [&](std::size_t i) {
    if (!scene.bodies[i].is_static) unions[i] = UnionBoundary::of(scene.bodies[i]);
  });
  std::vector<double> delta(set.records.size(), 0.0);
  parallel_for(set.records.size(), threads, [&](std::size_t r) {
    auto& c = set.records[r];
    if (c.type == TermType::kHullVertex) {
      const Vec3 x = moving_point(scene, c);
      c.anchor = closest_point_on_mesh(x, obs.priors[c.body]).point;
      return;
    }
    const auto cp = closest_point_on_union_boundary(c.anchor, unions[c.body]);
    c.hull = cp.hull;
    c.vertices = cp.vertices;
    c.weights = cp.weights;
    if (prev) {
      const double now = (moving_point(scene, c) - c.anchor).squaredNorm();
      const double before = (moving_point(scene, prev->records[r]) - c.anchor).squaredNorm();
      delta[r] = now - before;
    }
  });
  std::vector<TermDelta> deltas;
  for (std::size_t r = 0; r < set.records.size(); ++r)
    if (set.records[r].type != TermType::kHullVertex) deltas.push_back({r, delta[r]});
  return {std::move(set), std::move(deltas)};
}

struct RecordJacobian {
  std::vector<int> columns;
  Eigen::Matrix<double, 3, Eigen::Dynamic> block;
};

struct ObjectiveEval {
  double value = 0.0;
  VectorXd residual;                   // sqrt(w) (X - anchor), 3 rows per active record
  std::vector<RecordJacobian> jacobian;  // one per active record, same order

  MatrixXd dense_jacobian(int columns) const {
    MatrixXd j = MatrixXd::Zero(residual.size(), columns);
    for (std::size_t r = 0; r < jacobian.size(); ++r)
      for (std::size_t c = 0; c < jacobian[r].columns.size(); ++c)
        j.block<3, 1>(3 * r, jacobian[r].columns[c]) += jacobian[r].block.col(c);
    return j;
  }

  /// J^T r, half the gradient of the objective.
  VectorXd jtr(int columns) const {
    VectorXd g = VectorXd::Zero(columns);
    for (std::size_t r = 0; r < jacobian.size(); ++r)
      for (std::size_t c = 0; c < jacobian[r].columns.size(); ++c)
        g[jacobian[r].columns[c]] += jacobian[r].block.col(c).dot(residual.segment<3>(3 * r));
    return g;
  }
};

inline double objective_value(const SceneModel& scene, const CorrespondenceSet& set) {
  double o = 0.0;
  for (const auto& c : set.records)
    if (c.active) o += set.weight(c) * (moving_point(scene, c) - c.anchor).squaredNorm();
  return o;
}

inline ObjectiveEval evaluate_objective(const SceneModel& scene, const CorrespondenceSet& set,
                                        const VariableLayout& layout) {
  std::vector<RotationDerivatives> rot;
  for (const auto& b : scene.bodies) rot.push_back(rodrigues_derivatives(b.pose.theta));
  ObjectiveEval out;
  const std::size_t n = set.active_count();
  out.residual.resize(3 * n);
  out.jacobian.reserve(n);
  std::size_t row = 0;
  for (const auto& c : set.records) {
    if (!c.active) continue;
    const auto& b = scene.bodies[c.body];
    const double sw = std::sqrt(set.weight(c));
    RecordJacobian rj;
    const int q = layout.body_q[c.body];
    const int xo = layout.hull_x[c.body][c.hull];
    const int nterms = c.weights[1] == 0.0 && c.weights[2] == 0.0 ? 1 : 3;
    rj.block.setZero(3, (q >= 0 ? 6 : 0) + (xo >= 0 ? 3 * nterms : 0));
    Vec3 x = Vec3::Zero();
    int col = q >= 0 ? 6 : 0;
    if (q >= 0)
      for (int k = 0; k < 6; ++k) rj.columns.push_back(q + k);
    for (int m = 0; m < nterms; ++m) {
      const double w = c.weights[m];
      const auto tv = transform_vertex(rot[c.body], b.pose.t, b.hulls[c.hull].vertices[c.vertices[m]]);
      x += w * tv.world;
      if (q >= 0) {
        rj.block.leftCols<3>() += sw * w * tv.d_theta;
        rj.block.middleCols<3>(3) += sw * w * tv.d_t;
      }
      if (xo >= 0) {
        rj.block.middleCols<3>(col) = sw * w * tv.d_x;
        for (int k = 0; k < 3; ++k) rj.columns.push_back(xo + 3 * c.vertices[m] + k);
        col += 3;
      }
    }
    out.residual.segment<3>(3 * row) = sw * (x - c.anchor);
    out.value += out.residual.segment<3>(3 * row).squaredNorm();
    out.jacobian.push_back(std::move(rj));
    ++row;
  }
  return out;
}

/// Deactivates cloud/prior terms in descending delta order until the objective
/// at the current state no longer exceeds o_prev. Returns the number deleted.
inline std::size_t trim_terms(CorrespondenceSet& set, const std::vector<TermDelta>& deltas, double o_prev,
                              const SceneModel& scene) {
  if (!std::isfinite(o_prev)) return 0;
  double o = objective_value(scene, set);
  if (o <= o_prev) return 0;
  std::vector<TermDelta> order = deltas;
  std::stable_sort(order.begin(), order.end(), [](const TermDelta& a, const TermDelta& b) { return a.delta > b.delta; });
  std::size_t deleted = 0;
  for (const auto& d : order) {
    auto& c = set.records[d.record];
    if (!c.active) continue;
    o -= set.weight(c) * (moving_point(scene, c) - c.anchor).squaredNorm();
    c.active = false;
    ++deleted;
    if (o <= o_prev) return deleted;
  }
  // Re-sum to rule out accumulated round-off before giving up.
  if (objective_value(scene, set) <= o_prev) return deleted;
  throw Error(ErrorCode::kTrimExhausted, "objective still above previous value after deleting every cloud/prior term");
}

}  // namespace scenefit
