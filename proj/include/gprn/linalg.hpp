#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gprn/kernels.hpp"
#include "gprn/rng.hpp"

namespace gprn {

/// Lower Cholesky factor of M + jitter_used * I.
struct CholFactor {
  Eigen::MatrixXd L;
  double jitter_used = 0.0;

  Eigen::Index size() const { return L.rows(); }
  double log_det() const { return 2.0 * L.diagonal().array().log().sum(); }
  /// (M + jitter I)^{-1} b
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  /// L^{-1} b
  Eigen::MatrixXd solve_lower(const Eigen::MatrixXd& b) const;
  Eigen::MatrixXd reconstruct() const { return L * L.transpose(); }
};

/// Jitter rungs, as multiples of mean(diag(M)).
inline constexpr double kJitterLadder[] = {0.0, 1e-10, 1e-8, 1e-6, 1e-4};

/// Cholesky of (M + M^T)/2 with deterministic jitter escalation. A rung counts
/// as successful only if every squared pivot exceeds 1e-12 * mean(diag(M)),
/// so factors are never dominated by rounding. `role` names the matrix in
/// the error message.
CholFactor safe_cholesky(const Eigen::MatrixXd& M, const std::string& role = "matrix");

struct BlockShape {
  Eigen::Index n = 0;
  Eigen::Index p = 0;
  Eigen::Index q = 0;
  Eigen::Index total() const { return n * q * (p + 1); }
};

/// The block-diagonal prior covariance over u = (node blocks, weight blocks),
/// held as Cholesky factors of its distinct N x N blocks.
struct BlockPrior {
  /// One factor shared by every node, or one per node.
  std::vector<CholFactor> node_chols;
  CholFactor weight_chol;
  BlockShape shape;

  const CholFactor& node_chol(Eigen::Index j) const {
    return node_chols.size() == 1 ? node_chols.front() : node_chols[static_cast<std::size_t>(j)];
  }
  /// log|C_B| from the block factors.
  double log_det() const;
};

BlockPrior build_block_prior(const NoisyNodeKernel& kf, const KernelSpec& kw, const Inputs& X,
                             Eigen::Index p, Eigen::Index q);
/// Per-node covariance matrices (size 1 means shared) and the weight covariance.
BlockPrior build_block_prior(const std::vector<Eigen::MatrixXd>& node_grams,
                             const Eigen::MatrixXd& weight_gram, Eigen::Index p, Eigen::Index q);

/// u = blockdiag(L) z for a caller-supplied standard-normal vector z.
Eigen::VectorXd prior_sample_from_normals(const BlockPrior& prior, const Eigen::VectorXd& z);
Eigen::VectorXd prior_sample(const BlockPrior& prior, Rng& rng);
Eigen::VectorXd prior_sample(const BlockPrior& prior, std::uint64_t seed);

/// Single-output GP conditioning on noisy observations y at X.
class GpConditioner {
 public:
  GpConditioner(const KernelSpec& spec, double sigma_n, const Inputs& X);
  /// Reuses an existing factorization of K + sigma_n^2 I.
  GpConditioner(const KernelSpec& spec, const Inputs& X, CholFactor factor);

  /// Posterior mean and variance at the rows of Xs, given targets y.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> predict(const Eigen::VectorXd& y,
                                                      const Inputs& Xs) const;
  /// Weights alpha with mean = k_*^T alpha.
  Eigen::VectorXd weights(const Eigen::VectorXd& y) const { return factor_.solve(y); }
  const CholFactor& factor() const { return factor_; }
  const KernelSpec& spec() const { return spec_; }
  const Inputs& inputs() const { return X_; }

 private:
  KernelSpec spec_;
  Inputs X_;
  CholFactor factor_;
};

struct GpPrediction {
  double mean;
  double variance;
};

GpPrediction gp_posterior(const KernelSpec& spec, double sigma_n, const Inputs& X,
                          const Eigen::VectorXd& y, const Eigen::VectorXd& x_star);

/// Independent-GP baseline: one hyperparameter set per output chosen by
/// maximizing the log marginal likelihood over a log-spaced grid.
struct IndependentGpFit {
  std::vector<KernelSpec> kernels;
  std::vector<double> noise_std;
};

double gp_log_marginal(const KernelSpec& spec, double sigma_n, const Inputs& X,
                       const Eigen::VectorXd& y);

IndependentGpFit fit_independent_gps(const Inputs& X, const Eigen::MatrixXd& Y,
                                     const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
                                     KernelFamily family = KernelFamily::SquaredExponential);

/// Posterior means and variances (n_star x p each) of the baseline.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> predict_independent_gps(
    const IndependentGpFit& fit, const Inputs& X, const Eigen::MatrixXd& Y,
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask, const Inputs& Xs);

}  // namespace gprn
