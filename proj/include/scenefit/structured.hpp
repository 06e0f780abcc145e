#pragma once

#include <Eigen/Cholesky>
#include <algorithm>
#include <random>
#include <vector>

#include "scenefit/error.hpp"
#include "scenefit/geometry.hpp"
#include "scenefit/parallel.hpp"

namespace scenefit {

/// One pair's contribution outside the (q, x) block: its own square block on
/// the pair's force variables and the coupling strip to the pair's local (q, x)
/// columns.
struct PairCoupling {
  std::vector<int> local;  // (q, x) indices
  int f_offset = 0;
  MatrixXd coupling;  // nf x |local|
  MatrixXd block;     // nf x nf

  int nf() const { return static_cast<int>(block.rows()); }
};

/// H = A + U^T U where A holds a dense (q, x) block plus per-pair blocks that
/// only couple to (q, x), and U has few rows.
class StructuredSystem {
 public:
  StructuredSystem() = default;
  StructuredSystem(int nqx, int n) : nqx_(nqx), n_(n), a_qx_(MatrixXd::Zero(nqx, nqx)), u_(0, n) {}

  int size() const { return n_; }
  int qx_size() const { return nqx_; }
  MatrixXd& a_qx() { return a_qx_; }
  const MatrixXd& a_qx() const { return a_qx_; }
  std::vector<PairCoupling>& pairs() { return pairs_; }
  const std::vector<PairCoupling>& pairs() const { return pairs_; }
  MatrixXd& low_rank() { return u_; }
  const MatrixXd& low_rank() const { return u_; }

  void factorize(int threads = 1) {
    block_llt_.assign(pairs_.size(), {});
    std::vector<MatrixXd> folds(pairs_.size());
    std::vector<char> ok(pairs_.size(), 1);
    parallel_for(pairs_.size(), threads, [&](std::size_t p) {
      const auto& pc = pairs_[p];
      block_llt_[p].compute(pc.block);
      if (block_llt_[p].info() != Eigen::Success) {
        ok[p] = 0;
        return;
      }
      folds[p] = pc.coupling.transpose() * block_llt_[p].solve(pc.coupling);
    });
    for (std::size_t p = 0; p < pairs_.size(); ++p)
      if (!ok[p]) throw Error(ErrorCode::kSingularSystem, "pair block " + std::to_string(p) + " not positive definite");
    MatrixXd s = a_qx_;
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const auto& loc = pairs_[p].local;
      for (std::size_t r = 0; r < loc.size(); ++r)
        for (std::size_t c = 0; c < loc.size(); ++c) s(loc[r], loc[c]) -= folds[p](r, c);
    }
    schur_llt_.compute(s);
    if (schur_llt_.info() != Eigen::Success) throw Error(ErrorCode::kSingularSystem, "(q, x) Schur complement not positive definite");

    if (u_.rows() > 0) {
      MatrixXd ainv_ut(n_, u_.rows());
      for (Eigen::Index k = 0; k < u_.rows(); ++k) ainv_ut.col(k) = solve_A(u_.row(k).transpose());
      const MatrixXd cap = MatrixXd::Identity(u_.rows(), u_.rows()) + u_ * ainv_ut;
      capacitance_llt_.compute(0.5 * (cap + cap.transpose()));
      if (capacitance_llt_.info() != Eigen::Success) throw Error(ErrorCode::kSingularSystem, "capacitance matrix not positive definite");
    }
  }

  /// A^{-1} b by folding each pair into the (q, x) block.
  VectorXd solve_A(const VectorXd& b) const {
    VectorXd bqx = b.head(nqx_);
    std::vector<VectorXd> dinv_b(pairs_.size());
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const auto& pc = pairs_[p];
      dinv_b[p] = block_llt_[p].solve(b.segment(pc.f_offset, pc.nf()));
      const VectorXd t = pc.coupling.transpose() * dinv_b[p];
      for (std::size_t r = 0; r < pc.local.size(); ++r) bqx[pc.local[r]] -= t[r];
    }
    VectorXd x = b;
    x.head(nqx_) = schur_llt_.solve(bqx);
    for (std::size_t p = 0; p < pairs_.size(); ++p) {
      const auto& pc = pairs_[p];
      VectorXd xl(pc.local.size());
      for (std::size_t r = 0; r < pc.local.size(); ++r) xl[r] = x[pc.local[r]];
      x.segment(pc.f_offset, pc.nf()) = dinv_b[p] - block_llt_[p].solve(pc.coupling * xl);
    }
    return x;
  }

  /// H^{-1} b through the Woodbury identity.
  VectorXd solve_H(const VectorXd& b) const {
    const VectorXd y = solve_A(b);
    if (u_.rows() == 0) return y;
    const VectorXd c = u_.transpose() * capacitance_llt_.solve(u_ * y);
    return y - solve_A(c);
  }

  MatrixXd dense_A() const {
    MatrixXd a = MatrixXd::Zero(n_, n_);
    a.topLeftCorner(nqx_, nqx_) = a_qx_;
    for (const auto& pc : pairs_) {
      a.block(pc.f_offset, pc.f_offset, pc.nf(), pc.nf()) += pc.block;
      for (std::size_t c = 0; c < pc.local.size(); ++c) {
        a.block(pc.f_offset, pc.local[c], pc.nf(), 1) += pc.coupling.col(c);
        a.block(pc.local[c], pc.f_offset, 1, pc.nf()) += pc.coupling.col(c).transpose();
      }
    }
    return a;
  }

  MatrixXd dense_H() const { return dense_A() + u_.transpose() * u_; }

  VectorXd diagonal_H() const {
    VectorXd d = VectorXd::Zero(n_);
    d.head(nqx_) = a_qx_.diagonal();
    for (const auto& pc : pairs_) d.segment(pc.f_offset, pc.nf()) += pc.block.diagonal();
    if (u_.rows() > 0) d += u_.colwise().squaredNorm().transpose();
    return d;
  }

  /// Adds diag to the diagonal of A.
  void add_to_diagonal(const VectorXd& diag) {
    a_qx_.diagonal() += diag.head(nqx_);
    for (auto& pc : pairs_) pc.block.diagonal() += diag.segment(pc.f_offset, pc.nf());
  }

 private:
  int nqx_ = 0, n_ = 0;
  MatrixXd a_qx_;
  std::vector<PairCoupling> pairs_;
  MatrixXd u_;
  std::vector<Eigen::LLT<MatrixXd>> block_llt_;
  Eigen::LLT<MatrixXd> schur_llt_;
  Eigen::LLT<MatrixXd> capacitance_llt_;
};

/// Random symmetric positive definite structured system of Gauss-Newton type.
/// Each pair couples to twelve q columns and up to nf_per_pair random x columns.
inline StructuredSystem random_structured_system(int pairs, int nq, int nx, int nf_per_pair, int rank,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const int nqx = nq + nx;
  const int size = nqx + pairs * nf_per_pair;
  StructuredSystem s(nqx, size);
  {
    MatrixXd g(nqx + 5, nqx);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng) / std::sqrt(double(nqx));
    s.a_qx() = g.transpose() * g + 0.1 * MatrixXd::Identity(nqx, nqx);
  }
  std::uniform_int_distribution<int> pick_x(0, std::max(nx - 1, 0));
  for (int p = 0; p < pairs; ++p) {
    PairCoupling pc;
    std::vector<int> cols;
    const int q0 = nq > 0 ? 6 * ((p * 7) % std::max(nq / 6, 1)) : 0;
    for (int c = 0; c < std::min(12, nq); ++c) cols.push_back((q0 + c) % nq);
    for (int c = 0; c < std::min(nf_per_pair, nx); ++c) cols.push_back(nq + pick_x(rng));
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    pc.local = cols;
    pc.f_offset = nqx + p * nf_per_pair;
    // Rows of a pair-local Jacobian [J_qx J_f]; its Gram matrix splits into the three blocks.
    const int rows = nf_per_pair / 3 + 6;
    MatrixXd jl(rows, cols.size()), jf(rows, nf_per_pair);
    for (Eigen::Index i = 0; i < jl.size(); ++i) jl.data()[i] = n(rng) * 0.3;
    for (Eigen::Index i = 0; i < jf.size(); ++i) jf.data()[i] = n(rng) * 0.3;
    pc.block = jf.transpose() * jf + 0.05 * MatrixXd::Identity(nf_per_pair, nf_per_pair);
    pc.coupling = jf.transpose() * jl;
    const MatrixXd qq = jl.transpose() * jl;
    for (std::size_t r = 0; r < cols.size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c) s.a_qx()(cols[r], cols[c]) += qq(r, c);
    s.pairs().push_back(std::move(pc));
  }
  MatrixXd u(rank, size);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = n(rng) * 0.5;
  s.low_rank() = u;
  return s;
}

}  // namespace scenefit
