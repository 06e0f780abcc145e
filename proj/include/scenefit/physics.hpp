#pragma once

#include <vector>

#include "scenefit/contact.hpp"
#include "scenefit/geometry.hpp"
#include "scenefit/parallel.hpp"

namespace scenefit {

struct ProblemOptions {
  bool optimize_shape = true;  // body-frame vertices are unknowns
  bool friction = true;        // tangential forces and their constraints
  bool aggregation = false;    // one plane per body pair
};

struct PhysicsConfig {
  BarrierConfig barrier;
  double eta = 1.0;
  double cone_epsilon = 1e-10;
  int threads = 1;
};

/// Decision vector layout z = [q | x | f(pair 0) | f(pair 1) | ...].
/// q holds (theta, t) per dynamic body, x the body-frame vertices of dynamic
/// bodies, and each pair block one tangential force per vertex of both sides.
struct VariableLayout {
  std::vector<int> body_q;                 // offset or -1
  std::vector<std::vector<int>> hull_x;    // offset of the hull's first vertex or -1
  std::vector<std::vector<int>> hull_vertex;  // flat vertex id of the hull's first vertex
  std::vector<int> pair_f;
  std::vector<int> pair_vertices;
  int nq = 0, nx = 0, nf = 0, vertices = 0;

  int qx() const { return nq + nx; }
  int size() const { return nq + nx + nf; }

  static VariableLayout build(const SceneModel& scene, const std::vector<ContactPair>& pairs,
                              const ProblemOptions& opt) {
    VariableLayout l;
    const std::size_t nb = scene.bodies.size();
    l.body_q.assign(nb, -1);
    l.hull_x.resize(nb);
    l.hull_vertex.resize(nb);
    for (std::size_t i = 0; i < nb; ++i)
      if (!scene.bodies[i].is_static) {
        l.body_q[i] = l.nq;
        l.nq += 6;
      }
    int x = l.nq;
    for (std::size_t i = 0; i < nb; ++i)
      for (const auto& hull : scene.bodies[i].hulls) {
        const int nv = static_cast<int>(hull.vertices.size());
        const bool var = opt.optimize_shape && !scene.bodies[i].is_static;
        l.hull_x[i].push_back(var ? x : -1);
        if (var) x += 3 * nv;
        l.hull_vertex[i].push_back(l.vertices);
        l.vertices += nv;
      }
    l.nx = x - l.nq;
    int f = x;
    for (const auto& p : pairs) {
      const int nv = static_cast<int>(side_vertices(scene, p.a).size() + side_vertices(scene, p.b).size());
      l.pair_vertices.push_back(nv);
      l.pair_f.push_back(opt.friction ? f : -1);
      if (opt.friction) f += 3 * nv;
    }
    l.nf = f - x;
    return l;
  }

  VectorXd pack(const SceneModel& scene) const {
    VectorXd z = VectorXd::Zero(size());
    for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
      const auto& b = scene.bodies[i];
      if (body_q[i] >= 0) {
        z.segment<3>(body_q[i]) = b.pose.theta;
        z.segment<3>(body_q[i] + 3) = b.pose.t;
      }
      for (std::size_t j = 0; j < b.hulls.size(); ++j)
        if (hull_x[i][j] >= 0)
          for (std::size_t v = 0; v < b.hulls[j].vertices.size(); ++v)
            z.segment<3>(hull_x[i][j] + 3 * v) = b.hulls[j].vertices[v];
    }
    return z;
  }

  void unpack(const VectorXd& z, SceneModel& scene) const {
    for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
      auto& b = scene.bodies[i];
      if (body_q[i] >= 0) {
        b.pose.theta = z.segment<3>(body_q[i]);
        b.pose.t = z.segment<3>(body_q[i] + 3);
      }
      for (std::size_t j = 0; j < b.hulls.size(); ++j)
        if (hull_x[i][j] >= 0)
          for (std::size_t v = 0; v < b.hulls[j].vertices.size(); ++v)
            b.hulls[j].vertices[v] = z.segment<3>(hull_x[i][j] + 3 * v);
    }
  }
};

/// Per-vertex lumped mass of every body: density times the summed hull volumes
/// split evenly over the vertices, unless overridden.
inline std::vector<double> vertex_masses(const SceneModel& scene) {
  std::vector<double> m;
  for (const auto& b : scene.bodies) {
    if (b.vertex_mass) {
      m.push_back(*b.vertex_mass);
      continue;
    }
    double volume = 0.0;
    for (const auto& h : b.hulls) volume += hull_volume(h);
    m.push_back(b.mass_density * volume / static_cast<double>(b.vertex_count()));
  }
  return m;
}

struct GravityPotential {
  double value = 0.0;
  VectorXd gradient;  // over q and x
};

inline GravityPotential gravity_potential(const SceneModel& scene, const VariableLayout& layout,
                                          const std::vector<double>& masses) {
  GravityPotential out{0.0, VectorXd::Zero(layout.qx())};
  for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
    const auto& b = scene.bodies[i];
    if (b.is_static) continue;
    const auto rot = rodrigues_derivatives(b.pose.theta);
    const Vec3 w = -masses[i] * scene.gravity;
    for (std::size_t j = 0; j < b.hulls.size(); ++j)
      for (std::size_t v = 0; v < b.hulls[j].vertices.size(); ++v) {
        const auto tv = transform_vertex(rot, b.pose.t, b.hulls[j].vertices[v]);
        out.value += w.dot(tv.world);
        out.gradient.segment<3>(layout.body_q[i]) += tv.d_theta.transpose() * w;
        out.gradient.segment<3>(layout.body_q[i] + 3) += w;
        if (layout.hull_x[i][j] >= 0) out.gradient.segment<3>(layout.hull_x[i][j] + 3 * v) += tv.d_x.transpose() * w;
      }
  }
  return out;
}

/// Constraint rows of one contact pair. Columns split into the pair's local
/// (q, x) variables, listed in `local`, and its own force block.
struct PairBlock {
  std::vector<int> local;
  int f_offset = -1;
  int nf = 0;
  VectorXd eq;  // orthogonality (one per vertex) then plane balance (6)
  MatrixXd eq_qx, eq_f;
  VectorXd ineq;  // cone, before clamping
  MatrixXd ineq_qx, ineq_f;

  Vec4 plane = Vec4::Zero();
  double potential = 0.0;
  std::vector<Vec3> world;          // side A then side B
  std::vector<Vec3> normal_forces;  // mu dPsi/dX
  std::vector<SideVertex> vertices;
  int side_a_count = 0;
};

struct PhysicsEval {
  VectorXd equi;      // |q|
  MatrixXd equi_jac;  // |q| x |z|
  std::vector<PairBlock> pairs;
  double gravity_value = 0.0;
  double contact_value = 0.0;  // mu * sum of pair potentials

  /// Stacked equality constraints [equi; per pair eq].
  VectorXd equality() const {
    Eigen::Index n = equi.size();
    for (const auto& p : pairs) n += p.eq.size();
    VectorXd c(n);
    c.head(equi.size()) = equi;
    Eigen::Index at = equi.size();
    for (const auto& p : pairs) {
      c.segment(at, p.eq.size()) = p.eq;
      at += p.eq.size();
    }
    return c;
  }

  VectorXd inequality() const {
    Eigen::Index n = 0;
    for (const auto& p : pairs) n += p.ineq.size();
    VectorXd c(n);
    Eigen::Index at = 0;
    for (const auto& p : pairs) {
      c.segment(at, p.ineq.size()) = p.ineq;
      at += p.ineq.size();
    }
    return c;
  }

  /// Dense Jacobians of the stacked constraints; for tests and validation.
  MatrixXd equality_jacobian(const VariableLayout& layout) const {
    MatrixXd j = MatrixXd::Zero(equality().size(), layout.size());
    j.topRows(equi.size()) = equi_jac;
    Eigen::Index at = equi.size();
    for (const auto& p : pairs) {
      scatter(j, at, p, p.eq_qx, p.eq_f);
      at += p.eq.size();
    }
    return j;
  }

  MatrixXd inequality_jacobian(const VariableLayout& layout) const {
    MatrixXd j = MatrixXd::Zero(inequality().size(), layout.size());
    Eigen::Index at = 0;
    for (const auto& p : pairs) {
      scatter(j, at, p, p.ineq_qx, p.ineq_f);
      at += p.ineq.size();
    }
    return j;
  }

 private:
  static void scatter(MatrixXd& j, Eigen::Index row, const PairBlock& p, const MatrixXd& qx, const MatrixXd& f) {
    for (std::size_t c = 0; c < p.local.size(); ++c) j.block(row, p.local[c], qx.rows(), 1) += qx.col(c);
    if (p.nf > 0) j.block(row, p.f_offset, f.rows(), p.nf) += f;
  }
};

namespace detail {

struct VertexRef {
  Vec3 body_frame;
  VertexTransform tf;
  int q = -1, x = -1;  // global offsets
};

inline VertexRef vertex_ref(const SceneModel& scene, const VariableLayout& layout,
                            const std::vector<RotationDerivatives>& rot, const SideVertex& sv) {
  const auto& b = scene.bodies[sv.body];
  VertexRef r;
  r.body_frame = b.hulls[sv.hull].vertices[sv.vertex];
  r.tf = transform_vertex(rot[sv.body], b.pose.t, r.body_frame);
  r.q = layout.body_q[sv.body];
  const int hx = layout.hull_x[sv.body][sv.hull];
  r.x = hx >= 0 ? hx + 3 * sv.vertex : -1;
  return r;
}

inline Mat3 d_unit_projector_times(const Vec3& n, const Vec3& tau) {
  // d(T tau)/dn with T = I - nh nh^T, nh = n / |n|.
  const double len = n.norm();
  const Vec3 nh = n / len;
  return -((nh.dot(tau)) * Mat3::Identity() + nh * tau.transpose()) * (Mat3::Identity() - nh * nh.transpose()) / len;
}

}  // namespace detail

/// Evaluates every constraint block and its Jacobian at the scene's current
/// state with tangential forces read from z. Throws InfeasibleState when a pair
/// has no separating plane.
inline PhysicsEval evaluate_physics(const SceneModel& scene, const std::vector<ContactPair>& pairs,
                                    const VariableLayout& layout, const VectorXd& z,
                                    const std::vector<double>& masses, const PhysicsConfig& cfg) {
  const double mu = cfg.barrier.mu;
  std::vector<RotationDerivatives> rot;
  for (const auto& b : scene.bodies) rot.push_back(rodrigues_derivatives(b.pose.theta));

  PhysicsEval out;
  out.pairs.resize(pairs.size());
  std::vector<MatrixXd> pair_equi_qx(pairs.size());  // |q| rows over local columns

  parallel_for(pairs.size(), cfg.threads, [&](std::size_t pi) {
    const auto& pair = pairs[pi];
    PairBlock& blk = out.pairs[pi];
    blk.vertices = side_vertices(scene, pair.a);
    blk.side_a_count = static_cast<int>(blk.vertices.size());
    for (const auto& sv : side_vertices(scene, pair.b)) blk.vertices.push_back(sv);
    const int nv = static_cast<int>(blk.vertices.size());

    std::vector<detail::VertexRef> refs;
    for (const auto& sv : blk.vertices) refs.push_back(detail::vertex_ref(scene, layout, rot, sv));
    // Local variables: q of side A, q of side B, then x of every vertex.
    std::vector<int> q_col(scene.bodies.size(), -1);
    for (int body : {pair.a.body, pair.b.body})
      if (layout.body_q[body] >= 0) {
        q_col[body] = static_cast<int>(blk.local.size());
        for (int c = 0; c < 6; ++c) blk.local.push_back(layout.body_q[body] + c);
      }
    const int nq_local = static_cast<int>(blk.local.size());
    std::vector<int> x_col(nv, -1);
    for (int k = 0; k < nv; ++k)
      if (refs[k].x >= 0) {
        x_col[k] = static_cast<int>(blk.local.size());
        for (int c = 0; c < 3; ++c) blk.local.push_back(refs[k].x + c);
      }
    const int nloc = static_cast<int>(blk.local.size());
    MatrixXd jx = MatrixXd::Zero(3 * nv, nloc);
    for (int k = 0; k < nv; ++k) {
      const int qc = q_col[blk.vertices[k].body];
      if (qc >= 0) {
        jx.block<3, 3>(3 * k, qc) = refs[k].tf.d_theta;
        jx.block<3, 3>(3 * k, qc + 3) = refs[k].tf.d_t;
      }
      if (x_col[k] >= 0) jx.block<3, 3>(3 * k, x_col[k]) = refs[k].tf.d_x;
    }

    std::vector<Vec3> wa, wb;
    for (int k = 0; k < nv; ++k) (k < blk.side_a_count ? wa : wb).push_back(refs[k].tf.world);
    CollisionPotential cp;
    try {
      cp = collision_potential(wa, wb, cfg.barrier, pair.plane);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInfeasiblePair) throw;
      throw Error(ErrorCode::kInfeasibleState, "contact pair " + std::to_string(pi) + " interpenetrates");
    }
    blk.plane = cp.plane;
    blk.potential = cp.value;
    blk.normal_forces = normal_forces(cp, mu);
    for (const auto& r : refs) blk.world.push_back(r.tf.world);

    // Equilibrium rows from this pair's potential: mu Q^T H JX over local columns.
    const MatrixXd hjx = cp.hessian * jx;
    pair_equi_qx[pi] = mu * jx.leftCols(nq_local).transpose() * hjx;

    if (layout.pair_f[pi] < 0) {
      blk.eq = VectorXd::Zero(0);
      blk.ineq = VectorXd::Zero(0);
      blk.eq_qx = blk.ineq_qx = MatrixXd::Zero(0, nloc);
      blk.eq_f = blk.ineq_f = MatrixXd::Zero(0, 0);
      return;
    }
    blk.f_offset = layout.pair_f[pi];
    blk.nf = 3 * nv;
    std::vector<Vec3> f(nv);
    for (int k = 0; k < nv; ++k) f[k] = z.segment<3>(blk.f_offset + 3 * k);

    MatrixXd eq_x = MatrixXd::Zero(nv + 6, 3 * nv);
    blk.eq = VectorXd::Zero(nv + 6);
    blk.eq_f = MatrixXd::Zero(nv + 6, 3 * nv);
    MatrixXd ineq_x = MatrixXd::Zero(nv, 3 * nv);
    blk.ineq = VectorXd::Zero(nv);
    blk.ineq_f = MatrixXd::Zero(nv, 3 * nv);

    const Vec3 n = cp.plane.head<3>();
    const Vec3 nh = n.normalized();
    const Mat3 tproj = Mat3::Identity() - nh * nh.transpose();
    Vec3 force_sum = Vec3::Zero(), torque = Vec3::Zero();
    for (int k = 0; k < nv; ++k) {
      const Vec3& fp = blk.normal_forces[k];
      const auto hk = cp.hessian.middleRows<3>(3 * k);  // d fperp / dX, without mu
      blk.eq[k] = fp.dot(f[k]);
      eq_x.row(k) = mu * f[k].transpose() * hk;
      blk.eq_f.block<1, 3>(k, 3 * k) = fp.transpose();

      const double a = std::sqrt(f[k].squaredNorm() + cfg.cone_epsilon * cfg.cone_epsilon);
      const double b = std::sqrt(fp.squaredNorm() + cfg.cone_epsilon * cfg.cone_epsilon);
      blk.ineq[k] = a - cfg.eta * b;
      blk.ineq_f.block<1, 3>(k, 3 * k) = f[k].transpose() / a;
      ineq_x.row(k) = -cfg.eta * mu * fp.transpose() * hk / b;

      force_sum += f[k];
      torque += refs[k].tf.world.cross(f[k]);
      blk.eq_f.block<3, 3>(nv, 3 * k) = Mat3::Identity();
      blk.eq_f.block<3, 3>(nv + 3, 3 * k) = tproj * cross_matrix(refs[k].tf.world);
      eq_x.block<3, 3>(nv + 3, 3 * k) = -tproj * cross_matrix(f[k]);
    }
    blk.eq.segment<3>(nv) = force_sum;
    blk.eq.segment<3>(nv + 3) = tproj * torque;
    eq_x.middleRows<3>(nv + 3) += detail::d_unit_projector_times(n, torque) * cp.dplane_dX.topRows<3>();

    blk.eq_qx = eq_x * jx;
    blk.ineq_qx = ineq_x * jx;
  });

  // Per-vertex generalized force F_k = -m g + mu dPsi/dX - f, accumulated in pair order.
  std::vector<Vec3> force(layout.vertices, Vec3::Zero());
  for (std::size_t i = 0; i < scene.bodies.size(); ++i)
    for (std::size_t j = 0; j < scene.bodies[i].hulls.size(); ++j)
      for (std::size_t v = 0; v < scene.bodies[i].hulls[j].vertices.size(); ++v)
        force[layout.hull_vertex[i][j] + v] = -masses[i] * scene.gravity;
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& blk = out.pairs[pi];
    out.contact_value += mu * blk.potential;
    for (std::size_t k = 0; k < blk.vertices.size(); ++k) {
      const auto& sv = blk.vertices[k];
      Vec3& fk = force[layout.hull_vertex[sv.body][sv.hull] + sv.vertex];
      fk += blk.normal_forces[k];
      if (blk.nf > 0) fk -= z.segment<3>(blk.f_offset + 3 * k);
    }
  }

  out.equi = VectorXd::Zero(layout.nq);
  out.equi_jac = MatrixXd::Zero(layout.nq, layout.size());
  out.gravity_value = 0.0;
  for (std::size_t i = 0; i < scene.bodies.size(); ++i) {
    const auto& b = scene.bodies[i];
    for (std::size_t j = 0; j < b.hulls.size(); ++j)
      for (std::size_t v = 0; v < b.hulls[j].vertices.size(); ++v)
        out.gravity_value -= masses[i] * scene.gravity.dot(rot[i].rotation * b.hulls[j].vertices[v] + b.pose.t);
    const int q = layout.body_q[i];
    if (q < 0) continue;
    for (std::size_t j = 0; j < b.hulls.size(); ++j)
      for (std::size_t v = 0; v < b.hulls[j].vertices.size(); ++v) {
        const Vec3& x = b.hulls[j].vertices[v];
        const Vec3& fk = force[layout.hull_vertex[i][j] + v];
        for (int a = 0; a < 3; ++a) {
          out.equi[q + a] += (rot[i].first[a] * x).dot(fk);
          for (int c = 0; c < 3; ++c) out.equi_jac(q + a, q + c) += (rot[i].second[a][c] * x).dot(fk);
          const int xo = layout.hull_x[i][j];
          if (xo >= 0) out.equi_jac.block<1, 3>(q + a, xo + 3 * v) += fk.transpose() * rot[i].first[a];
        }
        out.equi.segment<3>(q + 3) += fk;
      }
  }
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& blk = out.pairs[pi];
    const MatrixXd& pq = pair_equi_qx[pi];
    for (Eigen::Index r = 0; r < pq.rows(); ++r)
      for (std::size_t c = 0; c < blk.local.size(); ++c) out.equi_jac(blk.local[r], blk.local[c]) += pq(r, c);
    if (blk.nf == 0) continue;
    for (std::size_t k = 0; k < blk.vertices.size(); ++k) {
      const auto& sv = blk.vertices[k];
      const int q = layout.body_q[sv.body];
      if (q < 0) continue;
      const Vec3& x = scene.bodies[sv.body].hulls[sv.hull].vertices[sv.vertex];
      Eigen::Matrix<double, 6, 3> jq;
      for (int a = 0; a < 3; ++a) jq.row(a) = (rot[sv.body].first[a] * x).transpose();
      jq.bottomRows<3>() = Mat3::Identity();
      out.equi_jac.block<6, 3>(q, blk.f_offset + 3 * k) -= jq;
    }
  }
  return out;
}

}  // namespace scenefit
