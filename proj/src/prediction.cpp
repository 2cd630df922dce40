#include "gprn/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gprn/errors.hpp"

namespace gprn {

PredictiveDistribution gaussian_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
    throw InputError("covariance does not match mean dimension");
  PredictiveDistribution d;
  d.mean = std::move(mean);
  d.covariance = std::move(covariance);
  d.kind = PredictiveKind::GaussianMoments;
  return d;
}

PredictiveDistribution gaussian_mixture(std::vector<GaussianComponent> components) {
  if (components.empty()) throw InputError("mixture needs at least one component");
  const Eigen::Index p = components.front().mean.size();
  const double inv_j = 1.0 / static_cast<double>(components.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
  for (const auto& c : components) {
    if (c.mean.size() != p || c.covariance.rows() != p || c.covariance.cols() != p)
      throw InputError("mixture components differ in dimension");
    mean += c.mean;
  }
  mean *= inv_j;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  for (const auto& c : components) {
    const Eigen::VectorXd dm = c.mean - mean;
    cov += c.covariance + dm * dm.transpose();
  }
  cov *= inv_j;
  cov = 0.5 * (cov + cov.transpose()).eval();

  PredictiveDistribution d;
  d.mean = std::move(mean);
  d.covariance = std::move(cov);
  d.kind = PredictiveKind::GaussianMixture;
  d.components = std::move(components);
  return d;
}

double gaussian_log_density(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                            const Eigen::VectorXd& y) {
  if (y.size() != mean.size()) throw InputError("log_density: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || (llt.matrixLLT().diagonal().array() <= 0.0).any())
    throw InputError("predictive covariance is not positive definite");
  const Eigen::VectorXd r = llt.matrixL().solve(y - mean);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (r.squaredNorm() + log_det + static_cast<double>(y.size()) * std::log(2.0 * M_PI));
}

double log_density(const PredictiveDistribution& dist, const Eigen::VectorXd& y) {
  if (dist.kind == PredictiveKind::GaussianMoments)
    return gaussian_log_density(dist.mean, dist.covariance, y);
  std::vector<double> terms;
  terms.reserve(dist.components.size());
  for (const auto& c : dist.components) terms.push_back(gaussian_log_density(c.mean, c.covariance, y));
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc / static_cast<double>(terms.size()));
}

Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& M) {
  const Eigen::MatrixXd S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  if ((eig.eigenvalues().array() >= 0.0).all()) return S;
  const Eigen::VectorXd lambda = eig.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd out = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

SignalNoiseSplit signal_noise_split(const Eigen::MatrixXd& total, const Eigen::MatrixXd& noise) {
  if (total.rows() != noise.rows() || total.cols() != noise.cols())
    throw InputError("signal_noise_split: covariance shapes differ");
  return {clamp_psd(total - noise), noise};
}

std::vector<CorrelationPoint> correlation_field(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& covariance_at,
    const Eigen::MatrixXd& x_grid, Eigen::Index i, Eigen::Index j) {
  std::vector<CorrelationPoint> out;
  out.reserve(static_cast<std::size_t>(x_grid.rows()));
  for (Eigen::Index r = 0; r < x_grid.rows(); ++r) {
    CorrelationPoint pt;
    pt.x = x_grid.row(r).transpose();
    const Eigen::MatrixXd C = covariance_at(pt.x);
    if (i < 0 || j < 0 || i >= C.rows() || j >= C.rows())
      throw InputError("correlation_field: output index out of range");
    const double vi = C(i, i), vj = C(j, j);
    if (!(vi > 0.0) || !(vj > 0.0)) {
      pt.zero_variance = true;
      pt.correlation = 0.0;
    } else if (i == j) {
      pt.correlation = 1.0;
    } else {
      pt.correlation = std::clamp(C(i, j) / std::sqrt(vi * vj), -1.0, 1.0);
    }
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace gprn
