#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gprn/data_io.hpp"
#include "gprn/linalg.hpp"
#include "gprn/model.hpp"
#include "gprn/prediction.hpp"

namespace gprn {

struct McmcConfig {
  int n_burnin = 1000;
  int n_samples = 1000;
  int thin = 2;
  std::uint64_t seed = 0;
  bool positive_weights = false;
  int shrink_cap = 100;

  void validate() const;
};

struct McmcChain {
  NetworkShape shape;
  Inputs X;
  std::vector<NetworkParams> samples;  ///< untransformed w, even with positive weights
  std::vector<double> log_liks;
  std::vector<int> shrink_counts;      ///< one per ESS step, burn-in included
  bool positive_weights = false;
};

using LogLikelihood = std::function<double(const Eigen::VectorXd&)>;

/// Test hooks for a single step.
struct EssHooks {
  std::optional<double> angle;  ///< replaces the initial angle draw
};

struct EssResult {
  Eigen::VectorXd u;
  double loglik = 0.0;
  double log_threshold = 0.0;
  int shrinks = 0;
  Eigen::VectorXd nu;  ///< the auxiliary prior draw defining the ellipse
};

/// One elliptical slice sampling update of u ~ N(0, C_B) times exp(loglik).
/// Throws StepFailure after `shrink_cap` rejected proposals.
EssResult ess_step(const Eigen::VectorXd& current, double current_loglik, const BlockPrior& prior,
                   const LogLikelihood& loglik, Rng& rng, const EssHooks& hooks = {},
                   int shrink_cap = 100);

/// Log-likelihood of the packed vector under the network likelihood.
LogLikelihood network_loglik(const Dataset& data, const NetworkShape& shape, double sigma_y,
                             bool positive_weights);

/// Samples u at fixed hyperparameters. `initial` defaults to a prior draw.
McmcChain run_chain(const Dataset& data, const Hyperparams& hyp, Eigen::Index q,
                    const McmcConfig& config,
                    const std::optional<Eigen::VectorXd>& initial = std::nullopt);

/// Mixture predictive at the rows of Xs with `n_mix` conditional draws per
/// retained sample.
std::vector<PredictiveDistribution> predict_mcmc(const McmcChain& chain, const Hyperparams& hyp,
                                                 const Inputs& Xs, int n_mix = 1,
                                                 std::uint64_t seed = 0);
PredictiveDistribution predict_mcmc(const McmcChain& chain, const Hyperparams& hyp,
                                    const Eigen::VectorXd& x_star, int n_mix = 1,
                                    std::uint64_t seed = 0);

/// Posterior mean of sigma_f^2 W(x*) W(x*)^T + sigma_y^2 I, one matrix per row of Xs.
std::vector<Eigen::MatrixXd> noise_covariance_mcmc(const McmcChain& chain, const Hyperparams& hyp,
                                                   const Inputs& Xs);

/// Posterior mean of W(x) E[f(x) | f-hat] at the training inputs, N x p.
Eigen::MatrixXd posterior_signal_mean(const McmcChain& chain, const Hyperparams& hyp);

}  // namespace gprn
