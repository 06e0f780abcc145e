#pragma once

#include <Eigen/LU>
#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "scenefit/io.hpp"
#include "scenefit/structured.hpp"

namespace scenefit {

struct BenchConfig {
  std::vector<int> pair_counts = {0, 1, 2, 4, 8, 12, 16, 22};
  int trials = 3;
  int vertices_per_hull = 20;
  int low_rank = 6;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct BenchRow {
  int pairs = 0;
  int params = 0;
  double structured_seconds = 0.0;  // best of trials, factorization plus solve
  double dense_seconds = 0.0;       // best of trials, LU plus solve
  double rel_residual = 0.0;        // worst of trials, |H x - b| / |b|
  double rel_difference = 0.0;      // worst of trials, |x - x_lu| / |x_lu|

  double speedup() const { return structured_seconds > 0.0 ? dense_seconds / structured_seconds : 0.0; }
};

/// Sizes of a scene with pairs + 1 hulls, each hull its own body, every hull
/// contributing vertices_per_hull shape vertices and a pair carrying tangential
/// forces for the vertices of both sides.
inline StructuredSystem bench_system(int pairs, int vertices_per_hull, int rank, std::uint64_t seed) {
  const int hulls = pairs + 1;
  const int nq = 6 * hulls;
  const int nx = 3 * vertices_per_hull * hulls;
  const int nf = 3 * 2 * vertices_per_hull;
  return random_structured_system(pairs, nq, nx, nf, rank, seed);
}

inline BenchRow bench_pairs(int pairs, const BenchConfig& cfg) {
  BenchRow row;
  row.pairs = pairs;
  row.structured_seconds = row.dense_seconds = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(cfg.seed * 1000003 + static_cast<std::uint64_t>(pairs));
  std::normal_distribution<double> n(0.0, 1.0);
  using clock = std::chrono::steady_clock;
  for (int t = 0; t < cfg.trials; ++t) {
    StructuredSystem s = bench_system(pairs, cfg.vertices_per_hull, cfg.low_rank, rng());
    row.params = s.size();
    VectorXd b(s.size());
    for (auto& v : b) v = n(rng);
    const MatrixXd h = s.dense_H();

    auto t0 = clock::now();
    s.factorize(cfg.threads);
    const VectorXd x = s.solve_H(b);
    row.structured_seconds = std::min(row.structured_seconds, std::chrono::duration<double>(clock::now() - t0).count());

    t0 = clock::now();
    const VectorXd ref = h.partialPivLu().solve(b);
    row.dense_seconds = std::min(row.dense_seconds, std::chrono::duration<double>(clock::now() - t0).count());

    row.rel_residual = std::max(row.rel_residual, (h * x - b).norm() / b.norm());
    row.rel_difference = std::max(row.rel_difference, (x - ref).norm() / ref.norm());
  }
  return row;
}

inline std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  std::vector<BenchRow> rows;
  for (int p : cfg.pair_counts) rows.push_back(bench_pairs(p, cfg));
  return rows;
}

inline CsvTable bench_table(const std::vector<BenchRow>& rows) {
  CsvTable t;
  t.header = {"pairs", "params", "structured_seconds", "dense_seconds", "speedup", "rel_residual", "rel_difference"};
  for (const auto& r : rows)
    t.rows.push_back({std::to_string(r.pairs), std::to_string(r.params), format_double(r.structured_seconds),
                      format_double(r.dense_seconds), format_double(r.speedup()), format_double(r.rel_residual),
                      format_double(r.rel_difference)});
  return t;
}

}  // namespace scenefit
