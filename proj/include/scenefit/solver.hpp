#pragma once

#include <chrono>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "scenefit/contact.hpp"
#include "scenefit/error.hpp"
#include "scenefit/objective.hpp"
#include "scenefit/physics.hpp"
#include "scenefit/structured.hpp"

namespace scenefit {

struct AlmSettings {
  double rho_eq = 1e-2;
  double rho_ineq = 2.0;
  double gamma_eq = 0.25;
  double gamma_ineq = 0.25;
  double beta_eq = 8.0;
  double beta_ineq = 4.0;
  double eps_r = 1e-6;
  double eps_g = 1e-2;
  double eps_c = 5e-4;
  int max_outer = 15;
  int max_lm = 100;
  int stall_window = 20;
  double stall_fraction = 0.01;
  double kkt_fraction = 0.01;
  int kkt_patience = 5;  // consecutive non-improving outer iterations before giving up
  double damping = 1e-4;
  double damping_up = 2.0;
  double damping_down = 0.5;
  double damping_max = 1e12;
  double damping_floor = 1e-6;  // relative to the largest diagonal entry
};

struct EstimationConfig {
  ObjectiveWeights weights;
  PhysicsConfig physics;
  ProblemOptions options;
  AlmSettings alm;
};

struct Penalty {
  VectorXd lambda_eq, lambda_ineq;
  double rho_eq = 1e-2, rho_ineq = 2.0;
};

/// Everything the least-squares residual needs at one z.
struct SubproblemEval {
  ObjectiveEval objective;
  PhysicsEval physics;
  VectorXd c_eq;
  VectorXd c_ineq;  // clamped
  VectorXd residual;
  double cost = 0.0;  // |r|^2
  VectorXd gradient;  // J^T r
};

/// Fixed pairs, layout, masses and correspondences for one ALM subproblem.
class EstimationProblem {
 public:
  EstimationProblem(SceneModel scene, const ProblemOptions& options, const PhysicsConfig& physics)
      : scene_(std::move(scene)), options_(options), physics_(physics) {
    scene_.validate();
    pairs_ = enumerate_pairs(scene_, options_.aggregation);
    layout_ = VariableLayout::build(scene_, pairs_, options_);
    masses_ = vertex_masses(scene_);
    for (std::size_t i = 0; i < scene_.bodies.size(); ++i)
      if (!scene_.bodies[i].is_static) scene_.bodies[i].vertex_mass = masses_[i];
  }

  const SceneModel& scene() const { return scene_; }
  const VariableLayout& layout() const { return layout_; }
  const std::vector<ContactPair>& pairs() const { return pairs_; }
  std::vector<ContactPair>& pairs() { return pairs_; }
  const PhysicsConfig& physics() const { return physics_; }
  const std::vector<double>& masses() const { return masses_; }
  CorrespondenceSet& correspondences() { return correspondences_; }
  const CorrespondenceSet& correspondences() const { return correspondences_; }

  /// Moves the problem to z. Vertex masses stay at their initial values.
  void set_state(const VectorXd& z) { layout_.unpack(z, scene_); }

  SceneModel scene_at(const VectorXd& z) const {
    SceneModel s = scene_;
    layout_.unpack(z, s);
    return s;
  }

  /// Returns nothing when some pair has no separating plane.
  std::optional<SubproblemEval> evaluate(const VectorXd& z, const Penalty& pen) const {
    const SceneModel s = scene_at(z);
    SubproblemEval e;
    try {
      e.physics = evaluate_physics(s, pairs_, layout_, z, masses_, physics_);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kInfeasibleState) return std::nullopt;
      throw;
    }
    e.objective = evaluate_objective(s, correspondences_, layout_);
    e.c_eq = e.physics.equality();
    e.c_ineq = e.physics.inequality().cwiseMax(0.0);
    if (pen.lambda_eq.size() != e.c_eq.size() || pen.lambda_ineq.size() != e.c_ineq.size())
      throw Error(ErrorCode::kInvalidInput, "multiplier size mismatch");

    const double se = std::sqrt(pen.rho_eq), si = std::sqrt(pen.rho_ineq);
    const Eigen::Index no = e.objective.residual.size();
    e.residual.resize(no + e.c_eq.size() + e.c_ineq.size());
    e.residual.head(no) = e.objective.residual;
    e.residual.segment(no, e.c_eq.size()) = se * (e.c_eq + pen.lambda_eq / pen.rho_eq);
    e.residual.tail(e.c_ineq.size()) = si * (e.c_ineq + pen.lambda_ineq / pen.rho_ineq);
    e.cost = e.residual.squaredNorm();

    const int n = layout_.size();
    e.gradient = e.objective.jtr(n);
    const int nq = layout_.nq;
    e.gradient += se * e.physics.equi_jac.transpose() * e.residual.segment(no, nq);
    Eigen::Index eq_at = no + nq, in_at = no + e.c_eq.size();
    for (const auto& p : e.physics.pairs) {
      const auto [rq, rf] = pair_rows(p, pen);
      VectorXd rp(rq.rows());
      rp << e.residual.segment(eq_at, p.eq.size()), e.residual.segment(in_at, p.ineq.size());
      eq_at += p.eq.size();
      in_at += p.ineq.size();
      if (rq.rows() == 0) continue;
      const VectorXd gq = rq.transpose() * rp;
      for (std::size_t c = 0; c < p.local.size(); ++c) e.gradient[p.local[c]] += gq[c];
      e.gradient.segment(p.f_offset, p.nf) += rf.transpose() * rp;
    }
    return e;
  }

  /// Gauss-Newton matrix J^T J in structured form, without damping.
  StructuredSystem gauss_newton(const SubproblemEval& e, const Penalty& pen) const {
    StructuredSystem sys(layout_.qx(), layout_.size());
    MatrixXd& a = sys.a_qx();
    for (const auto& rj : e.objective.jacobian) {
      const MatrixXd g = rj.block.transpose() * rj.block;
      for (std::size_t r = 0; r < rj.columns.size(); ++r)
        for (std::size_t c = 0; c < rj.columns.size(); ++c) a(rj.columns[r], rj.columns[c]) += g(r, c);
    }
    for (const auto& p : e.physics.pairs) {
      if (p.nf == 0) continue;
      const auto [rq, rf] = pair_rows(p, pen);
      const MatrixXd g = rq.transpose() * rq;
      for (std::size_t r = 0; r < p.local.size(); ++r)
        for (std::size_t c = 0; c < p.local.size(); ++c) a(p.local[r], p.local[c]) += g(r, c);
      PairCoupling pc;
      pc.local = p.local;
      pc.f_offset = p.f_offset;
      pc.coupling = rf.transpose() * rq;
      pc.block = rf.transpose() * rf;
      sys.pairs().push_back(std::move(pc));
    }
    sys.low_rank() = std::sqrt(pen.rho_eq) * e.physics.equi_jac;
    return sys;
  }

  /// Scaled Jacobian rows of one pair's equality and active inequality constraints.
  static std::pair<MatrixXd, MatrixXd> pair_rows(const PairBlock& p, const Penalty& pen) {
    const Eigen::Index ne = p.eq.size(), ni = p.ineq.size();
    MatrixXd rq(ne + ni, p.local.size()), rf(ne + ni, p.nf);
    const double se = std::sqrt(pen.rho_eq), si = std::sqrt(pen.rho_ineq);
    if (ne > 0) {
      rq.topRows(ne) = se * p.eq_qx;
      rf.topRows(ne) = se * p.eq_f;
    }
    for (Eigen::Index k = 0; k < ni; ++k) {
      const bool active = p.ineq[k] > 0.0;
      rq.row(ne + k) = active ? VectorXd(si * p.ineq_qx.row(k).transpose()) : VectorXd::Zero(p.local.size());
      rf.row(ne + k) = active ? VectorXd(si * p.ineq_f.row(k).transpose()) : VectorXd::Zero(p.nf);
    }
    return {rq, rf};
  }

  /// Gradient of the Lagrangian O + lambda_eq^T C_eq + lambda_ineq^T [C_ineq]_+.
  VectorXd lagrangian_gradient(const SubproblemEval& e, const Penalty& pen) const {
    const int n = layout_.size();
    VectorXd g = 2.0 * e.objective.jtr(n);
    const int nq = layout_.nq;
    g += e.physics.equi_jac.transpose() * pen.lambda_eq.head(nq);
    Eigen::Index eq_at = nq, in_at = 0;
    for (const auto& p : e.physics.pairs) {
      for (Eigen::Index r = 0; r < p.eq.size(); ++r) {
        const double l = pen.lambda_eq[eq_at + r];
        for (std::size_t c = 0; c < p.local.size(); ++c) g[p.local[c]] += l * p.eq_qx(r, c);
        if (p.nf > 0) g.segment(p.f_offset, p.nf) += l * p.eq_f.row(r).transpose();
      }
      for (Eigen::Index r = 0; r < p.ineq.size(); ++r) {
        if (p.ineq[r] <= 0.0) continue;
        const double l = pen.lambda_ineq[in_at + r];
        for (std::size_t c = 0; c < p.local.size(); ++c) g[p.local[c]] += l * p.ineq_qx(r, c);
        g.segment(p.f_offset, p.nf) += l * p.ineq_f.row(r).transpose();
      }
      eq_at += p.eq.size();
      in_at += p.ineq.size();
    }
    return g;
  }

  Penalty initial_penalty(const AlmSettings& s) const {
    std::size_t neq = layout_.nq, nin = 0;
    for (std::size_t p = 0; p < pairs_.size(); ++p)
      if (layout_.pair_f[p] >= 0) {
        neq += layout_.pair_vertices[p] + 6;
        nin += layout_.pair_vertices[p];
      }
    Penalty pen;
    pen.lambda_eq = VectorXd::Zero(neq);
    pen.lambda_ineq = VectorXd::Zero(nin);
    pen.rho_eq = s.rho_eq;
    pen.rho_ineq = s.rho_ineq;
    return pen;
  }

 private:
  SceneModel scene_;
  ProblemOptions options_;
  PhysicsConfig physics_;
  std::vector<ContactPair> pairs_;
  VariableLayout layout_;
  std::vector<double> masses_;
  CorrespondenceSet correspondences_;
};

struct LmReport {
  int iterations = 0;
  int rejections = 0;
  int infeasible_accepts = 0;
  double initial_cost = 0.0;
  double cost = 0.0;
  std::string stop;
};

/// Independent recheck that every pair still admits its plane with a finite barrier.
inline bool barriers_finite(const SceneModel& scene, const std::vector<ContactPair>& pairs) {
  for (const auto& p : pairs) {
    if (!p.plane) return false;
    const auto a = side_world_vertices(scene, p.a), b = side_world_vertices(scene, p.b);
    if (!std::isfinite(barrier_value(*p.plane, a, b))) return false;
  }
  return true;
}

/// Damped Gauss-Newton on |r(z)|^2. Steps that leave the feasible set or do not
/// lower the cost are rejected and the damping grows.
inline LmReport lm_minimize(EstimationProblem& problem, VectorXd& z, const Penalty& pen, const AlmSettings& s) {
  LmReport rep;
  auto current = problem.evaluate(z, pen);
  if (!current) throw Error(ErrorCode::kInfeasibleState, "LM start point is not penetration free");
  for (std::size_t p = 0; p < problem.pairs().size(); ++p) problem.pairs()[p].plane = current->physics.pairs[p].plane;
  rep.initial_cost = rep.cost = current->cost;
  std::deque<double> history{current->cost};
  double lambda = s.damping;
  const int threads = problem.physics().threads;

  while (true) {
    if (current->residual.size() == 0 || current->residual.lpNorm<Eigen::Infinity>() <= s.eps_r) {
      rep.stop = "residual";
      break;
    }
    if (current->gradient.lpNorm<Eigen::Infinity>() <= s.eps_g) {
      rep.stop = "gradient";
      break;
    }
    if (static_cast<int>(history.size()) > s.stall_window) {
      const double then = history.front();
      if (then - current->cost < s.stall_fraction * then) {
        rep.stop = "stall";
        break;
      }
    }
    if (rep.iterations >= s.max_lm) {
      rep.stop = "max_iterations";
      break;
    }

    const StructuredSystem base = problem.gauss_newton(*current, pen);
    const VectorXd diag = base.diagonal_H();
    const double floor = s.damping_floor * std::max(1.0, diag.maxCoeff());
    bool accepted = false;
    while (lambda <= s.damping_max) {
      StructuredSystem sys = base;
      sys.add_to_diagonal(lambda * diag.cwiseMax(floor));
      VectorXd step;
      try {
        sys.factorize(threads);
        step = -sys.solve_H(current->gradient);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kSingularSystem) throw;
        lambda *= s.damping_up;
        ++rep.rejections;
        continue;
      }
      const VectorXd trial = z + step;
      auto next = step.allFinite() ? problem.evaluate(trial, pen) : std::nullopt;
      if (next && next->cost < current->cost) {
        z = trial;
        current = std::move(next);
        for (std::size_t p = 0; p < problem.pairs().size(); ++p)
          problem.pairs()[p].plane = current->physics.pairs[p].plane;
        if (!barriers_finite(problem.scene_at(z), problem.pairs())) ++rep.infeasible_accepts;
        lambda = std::max(lambda * s.damping_down, 1e-12);
        accepted = true;
        break;
      }
      lambda *= s.damping_up;
      ++rep.rejections;
    }
    if (!accepted) {
      rep.stop = "damping";
      break;
    }
    ++rep.iterations;
    rep.cost = current->cost;
    history.push_back(current->cost);
    if (static_cast<int>(history.size()) > s.stall_window + 1) history.pop_front();
  }
  rep.cost = current->cost;
  return rep;
}

struct OuterRecord {
  int iteration = 0;
  double objective = 0.0;       // after refresh and trim
  double objective_prev = 0.0;  // after the previous LM solve; infinite at first
  double objective_post = 0.0;  // after this LM solve
  double eq_norm = 0.0;
  double ineq_norm = 0.0;
  double kkt = 0.0;
  double rho_eq = 0.0;  // in effect during this LM solve
  double rho_ineq = 0.0;
  int lm_iterations = 0;
  std::string lm_stop;
  std::size_t trimmed = 0;
  std::size_t active_terms = 0;
  double seconds = 0.0;
};

struct AlmResult {
  SceneModel scene;
  VectorXd z;
  VariableLayout layout;
  std::vector<ContactPair> pairs;
  Penalty penalty;
  std::vector<OuterRecord> trace;
  std::string termination;
  bool converged = false;
  int lm_iterations = 0;
  int infeasible_accepts = 0;
  double eq_norm = 0.0;
  double ineq_norm = 0.0;
};

/// Joint shape and pose estimation by the augmented Lagrangian method.
/// `on_iteration` sees each trace record as soon as it is complete.
template <typename Callback = std::nullptr_t>
AlmResult alm_optimize(const SceneModel& initial, const Observation& obs, const EstimationConfig& cfg,
                       Callback on_iteration = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const AlmSettings& s = cfg.alm;
  EstimationProblem problem(initial, cfg.options, cfg.physics);
  VectorXd z = problem.layout().pack(problem.scene());
  Penalty pen = problem.initial_penalty(s);
  const int threads = cfg.physics.threads;

  const auto first = problem.evaluate(z, pen);
  if (!first) throw Error(ErrorCode::kInfeasibleInitialization, "initial scene is not penetration free");
  double eq_prev = first->c_eq.lpNorm<Eigen::Infinity>();
  double ineq_prev = first->c_ineq.size() ? first->c_ineq.lpNorm<Eigen::Infinity>() : 0.0;
  double kkt_prev = std::numeric_limits<double>::infinity();
  int stalled = 0;
  double o_prev = std::numeric_limits<double>::infinity();

  AlmResult res;
  const CorrespondenceSet* prev_set = nullptr;
  CorrespondenceSet prev_storage;
  for (int it = 1; it <= s.max_outer; ++it) {
    OuterRecord rec;
    rec.iteration = it;
    rec.objective_prev = o_prev;
    rec.rho_eq = pen.rho_eq;
    rec.rho_ineq = pen.rho_ineq;

    auto [set, deltas] = refresh_correspondences(problem.scene(), obs, cfg.weights, prev_set, threads);
    rec.trimmed = trim_terms(set, deltas, o_prev, problem.scene());
    rec.objective = objective_value(problem.scene(), set);
    rec.active_terms = set.active_count();
    problem.correspondences() = set;

    const auto lm = lm_minimize(problem, z, pen, s);
    rec.lm_iterations = lm.iterations;
    rec.lm_stop = lm.stop;
    res.lm_iterations += lm.iterations;
    res.infeasible_accepts += lm.infeasible_accepts;

    problem.set_state(z);
    SceneModel canon = problem.scene();
    for (auto& b : canon.bodies) b.pose.canonicalize();
    z.head(problem.layout().qx()) = problem.layout().pack(canon).head(problem.layout().qx());
    problem.set_state(z);

    const auto e = problem.evaluate(z, pen);
    pen.lambda_eq += pen.rho_eq * e->c_eq;
    pen.lambda_ineq = (pen.lambda_ineq + pen.rho_ineq * e->c_ineq).cwiseMax(0.0);
    const double eq = e->c_eq.lpNorm<Eigen::Infinity>();
    const double ineq = e->c_ineq.size() ? e->c_ineq.lpNorm<Eigen::Infinity>() : 0.0;
    const double stationarity = problem.lagrangian_gradient(*e, pen).lpNorm<Eigen::Infinity>();
    rec.eq_norm = eq;
    rec.ineq_norm = ineq;
    rec.kkt = std::max({stationarity, eq, ineq});
    rec.objective_post = e->objective.value;
    if (eq >= s.gamma_eq * eq_prev) pen.rho_eq *= s.beta_eq;
    if (ineq >= s.gamma_ineq * ineq_prev && ineq > 0.0) pen.rho_ineq *= s.beta_ineq;
    eq_prev = eq;
    ineq_prev = ineq;
    o_prev = e->objective.value;

    prev_storage = problem.correspondences();
    prev_set = &prev_storage;

    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.trace.push_back(rec);
    if constexpr (!std::is_same_v<Callback, std::nullptr_t>) on_iteration(rec);

    res.eq_norm = eq;
    res.ineq_norm = ineq;
    if (eq <= s.eps_c && ineq <= s.eps_c) {
      res.termination = "converged";
      res.converged = true;
      break;
    }
    stalled = std::isfinite(kkt_prev) && rec.kkt > (1.0 - s.kkt_fraction) * kkt_prev ? stalled + 1 : 0;
    kkt_prev = rec.kkt;
    if (stalled >= s.kkt_patience) {
      res.termination = "kkt_stall";
      break;
    }
    if (it == s.max_outer) res.termination = "max_outer";
  }
  res.scene = problem.scene();
  res.z = z;
  res.layout = problem.layout();
  res.pairs = problem.pairs();
  res.penalty = pen;
  return res;
}

}  // namespace scenefit
