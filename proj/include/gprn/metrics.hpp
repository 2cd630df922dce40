#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gprn/model.hpp"

namespace gprn {

/// Evaluation scores; unset fields were not computed.
struct MetricReport {
  std::optional<double> smse;
  std::optional<double> msll;
  std::optional<double> mae;
  std::optional<double> historical_mse;
  std::optional<double> forecast_loglik;
  std::vector<double> smse_per_output;
  std::vector<double> msll_per_output;
  std::vector<double> mae_per_output;
};

/// Moments used to standardize: per output mean and variance.
struct TargetStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

/// Population moments of each column over the entries where `mask` holds.
TargetStats column_stats(const Eigen::MatrixXd& Y, const Mask& mask);

enum class SmseNormalizer { TestVariance, TrainVariance };

/// Per output: MSE / variance of the targets; averaged over outputs.
/// `train` is only read with SmseNormalizer::TrainVariance.
double smse(const Eigen::MatrixXd& pred_means, const Eigen::MatrixXd& truths, const Mask& mask,
            SmseNormalizer normalizer = SmseNormalizer::TestVariance,
            const TargetStats* train = nullptr, std::vector<double>* per_output = nullptr);

/// Mean over test points of -log N(y; mu, v) + log N(y; train_mean, train_var),
/// averaged over outputs.
double msll(const Eigen::MatrixXd& pred_means, const Eigen::MatrixXd& pred_vars,
            const Eigen::MatrixXd& truths, const Mask& mask, const TargetStats& train,
            std::vector<double>* per_output = nullptr);

double mae(const Eigen::MatrixXd& pred_means, const Eigen::MatrixXd& truths, const Mask& mask,
           std::vector<double>* per_output = nullptr);

/// Mean over time of the mean squared entrywise gap between Sigma(t) and y y^T.
double historical_mse(const std::vector<Eigen::MatrixXd>& sigma_pred,
                      const std::vector<Eigen::VectorXd>& Y);

/// Sum of log N(y_t; mean, Sigma_t); mean defaults to zero.
double forecast_loglik(const std::vector<Eigen::MatrixXd>& sigma_pred,
                       const std::vector<Eigen::VectorXd>& Y_new,
                       const std::vector<Eigen::VectorXd>* means = nullptr);

/// Flat JSON object with snake_case keys.
std::string metric_report_json(const MetricReport& report);

}  // namespace gprn
