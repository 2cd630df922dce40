#include "gprn/metrics.hpp"

#include <cmath>

#include <json.hpp>

#include "gprn/errors.hpp"
#include "gprn/prediction.hpp"

namespace gprn {
namespace {

void check_aligned(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Mask& mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || mask.rows() != a.rows() ||
      mask.cols() != a.cols())
    throw InputError("metric inputs are not aligned");
}

double average(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double neg_log_normal(double y, double mean, double var) {
  const double r = y - mean;
  return 0.5 * std::log(2.0 * M_PI * var) + 0.5 * r * r / var;
}

}  // namespace

TargetStats column_stats(const Eigen::MatrixXd& Y, const Mask& mask) {
  TargetStats s;
  s.mean = Eigen::VectorXd::Zero(Y.cols());
  s.var = Eigen::VectorXd::Zero(Y.cols());
  for (Eigen::Index c = 0; c < Y.cols(); ++c) {
    double sum = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index r = 0; r < Y.rows(); ++r)
      if (mask(r, c)) {
        sum += Y(r, c);
        ++count;
      }
    if (count == 0) continue;
    const double m = sum / static_cast<double>(count);
    double sq = 0.0;
    for (Eigen::Index r = 0; r < Y.rows(); ++r)
      if (mask(r, c)) sq += (Y(r, c) - m) * (Y(r, c) - m);
    s.mean(c) = m;
    s.var(c) = sq / static_cast<double>(count);
  }
  return s;
}

double smse(const Eigen::MatrixXd& pred_means, const Eigen::MatrixXd& truths, const Mask& mask,
            SmseNormalizer normalizer, const TargetStats* train, std::vector<double>* per_output) {
  check_aligned(pred_means, truths, mask);
  if (normalizer == SmseNormalizer::TrainVariance && !train)
    throw InputError("train-variance SMSE needs training statistics");
  const TargetStats test = column_stats(truths, mask);
  std::vector<double> scores;
  for (Eigen::Index c = 0; c < truths.cols(); ++c) {
    double sse = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index r = 0; r < truths.rows(); ++r)
      if (mask(r, c)) {
        const double e = pred_means(r, c) - truths(r, c);
        sse += e * e;
        ++count;
      }
    if (count == 0) continue;
    const double var = normalizer == SmseNormalizer::TestVariance ? test.var(c) : train->var(c);
    if (!(var > 0.0)) throw InputError("SMSE undefined: output " + std::to_string(c) + " has zero target variance");
    scores.push_back(sse / static_cast<double>(count) / var);
  }
  if (scores.empty()) throw InputError("SMSE: no observed targets");
  if (per_output) *per_output = scores;
  return average(scores);
}

double msll(const Eigen::MatrixXd& pred_means, const Eigen::MatrixXd& pred_vars,
            const Eigen::MatrixXd& truths, const Mask& mask, const TargetStats& train,
            std::vector<double>* per_output) {
  check_aligned(pred_means, truths, mask);
  check_aligned(pred_vars, truths, mask);
  if (train.mean.size() != truths.cols() || train.var.size() != truths.cols())
    throw InputError("MSLL: training statistics do not match outputs");
  std::vector<double> scores;
  for (Eigen::Index c = 0; c < truths.cols(); ++c) {
    double total = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index r = 0; r < truths.rows(); ++r) {
      if (!mask(r, c)) continue;
      if (!(pred_vars(r, c) > 0.0)) throw InputError("MSLL: predictive variance must be positive");
      if (!(train.var(c) > 0.0)) throw InputError("MSLL: training variance must be positive");
      total += neg_log_normal(truths(r, c), pred_means(r, c), pred_vars(r, c)) -
               neg_log_normal(truths(r, c), train.mean(c), train.var(c));
      ++count;
    }
    if (count) scores.push_back(total / static_cast<double>(count));
  }
  if (scores.empty()) throw InputError("MSLL: no observed targets");
  if (per_output) *per_output = scores;
  return average(scores);
}

double mae(const Eigen::MatrixXd& pred_means, const Eigen::MatrixXd& truths, const Mask& mask,
           std::vector<double>* per_output) {
  check_aligned(pred_means, truths, mask);
  std::vector<double> scores;
  double total = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index c = 0; c < truths.cols(); ++c) {
    double col = 0.0;
    Eigen::Index n = 0;
    for (Eigen::Index r = 0; r < truths.rows(); ++r)
      if (mask(r, c)) {
        col += std::abs(pred_means(r, c) - truths(r, c));
        ++n;
      }
    scores.push_back(n ? col / static_cast<double>(n) : 0.0);
    total += col;
    count += n;
  }
  if (per_output) *per_output = scores;
  return count ? total / static_cast<double>(count) : 0.0;
}

double historical_mse(const std::vector<Eigen::MatrixXd>& sigma_pred,
                      const std::vector<Eigen::VectorXd>& Y) {
  if (sigma_pred.size() != Y.size()) throw InputError("historical MSE inputs are not aligned");
  if (Y.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < Y.size(); ++t) {
    if (sigma_pred[t].rows() != Y[t].size() || sigma_pred[t].cols() != Y[t].size())
      throw InputError("historical MSE: covariance does not match observation");
    total += (sigma_pred[t] - Y[t] * Y[t].transpose()).squaredNorm() /
             static_cast<double>(sigma_pred[t].size());
  }
  return total / static_cast<double>(Y.size());
}

double forecast_loglik(const std::vector<Eigen::MatrixXd>& sigma_pred,
                       const std::vector<Eigen::VectorXd>& Y_new,
                       const std::vector<Eigen::VectorXd>* means) {
  if (sigma_pred.size() != Y_new.size() || (means && means->size() != Y_new.size()))
    throw InputError("forecast inputs are not aligned");
  double total = 0.0;
  for (std::size_t t = 0; t < Y_new.size(); ++t) {
    const Eigen::VectorXd mu = means ? (*means)[t] : Eigen::VectorXd::Zero(Y_new[t].size());
    try {
      total += gaussian_log_density(mu, sigma_pred[t], Y_new[t]);
    } catch (const InputError&) {
      throw InputError("forecast covariance " + std::to_string(t) + " is singular");
    }
  }
  return total;
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("smse", report.smse);
  put("msll", report.msll);
  put("mae", report.mae);
  put("historical_mse", report.historical_mse);
  put("forecast_loglik", report.forecast_loglik);
  if (!report.smse_per_output.empty()) j["smse_per_output"] = report.smse_per_output;
  if (!report.msll_per_output.empty()) j["msll_per_output"] = report.msll_per_output;
  if (!report.mae_per_output.empty()) j["mae_per_output"] = report.mae_per_output;
  return j.dump(2) + "\n";
}

}  // namespace gprn
