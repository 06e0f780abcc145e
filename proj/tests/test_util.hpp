#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>

namespace scenefit::testing {

/// Central finite-difference Jacobian of f at x.
inline Eigen::MatrixXd numerical_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    jac.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

/// max |a - b| / max(|b|_max, floor): a matrix-level relative error.
inline double relative_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric, double floor = 1e-8) {
  const double scale = std::max(numeric.cwiseAbs().maxCoeff(), floor);
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

}  // namespace scenefit::testing
