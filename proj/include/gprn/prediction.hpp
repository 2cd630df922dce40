#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace gprn {

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

enum class PredictiveKind { GaussianMoments, GaussianMixture };

/// Predictive distribution of y(x*). For mixtures, `mean` and `covariance`
/// hold the exact mixture moments and the components are equally weighted.
struct PredictiveDistribution {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  PredictiveKind kind = PredictiveKind::GaussianMoments;
  std::vector<GaussianComponent> components;

  Eigen::Index dim() const { return mean.size(); }
};

PredictiveDistribution gaussian_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance);
/// Equal-weight mixture; moments follow the law of total covariance.
PredictiveDistribution gaussian_mixture(std::vector<GaussianComponent> components);

/// log N(y; mean, cov). Throws InputError if cov is not positive definite.
double gaussian_log_density(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                            const Eigen::VectorXd& y);

double log_density(const PredictiveDistribution& dist, const Eigen::VectorXd& y);

/// Symmetrize and raise every eigenvalue below zero to zero.
Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& M);

struct SignalNoiseSplit {
  Eigen::MatrixXd signal;
  Eigen::MatrixXd noise;
};

/// signal = clamp_psd(total - noise).
SignalNoiseSplit signal_noise_split(const Eigen::MatrixXd& total, const Eigen::MatrixXd& noise);

struct CorrelationPoint {
  Eigen::VectorXd x;
  double correlation = 0.0;
  bool zero_variance = false;
};

/// Correlation between outputs i and j of covariance(x) at every grid row.
std::vector<CorrelationPoint> correlation_field(
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& covariance_at,
    const Eigen::MatrixXd& x_grid, Eigen::Index i, Eigen::Index j);

}  // namespace gprn
