#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "gprn/rng.hpp"

namespace gprn::testing {

inline double normal_cdf(double x, double sd = 1.0) { return 0.5 * std::erfc(-x / (sd * std::sqrt(2.0))); }

/// Two-sided one-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double F = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic p-value P(sqrt(n) D > t) from the Kolmogorov distribution.
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double t = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * t * t);
  return std::clamp(p, 0.0, 1.0);
}

inline Eigen::MatrixXd random_inputs(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = uniform01(rng);
  return X;
}

inline Eigen::MatrixXd random_spd(Rng& rng, Eigen::Index n) {
  Eigen::MatrixXd A(n, n);
  for (Eigen::Index i = 0; i < A.size(); ++i) A(i) = standard_normal(rng);
  Eigen::MatrixXd S = A * A.transpose();
  S.diagonal().array() += 0.5;
  return S;
}

inline Eigen::MatrixXd sample_covariance(const std::vector<Eigen::VectorXd>& xs) {
  const Eigen::Index d = xs.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, d);
  for (const auto& x : xs) C += (x - mean) * (x - mean).transpose();
  return C / static_cast<double>(xs.size() - 1);
}

inline double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace gprn::testing
