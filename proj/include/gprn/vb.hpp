#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gprn/data_io.hpp"
#include "gprn/linalg.hpp"
#include "gprn/model.hpp"
#include "gprn/prediction.hpp"

namespace gprn {

/// Multivariate normal factor with cached log-determinant of `cov`.
struct GaussianFactor {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double log_det = 0.0;
};

double ig_mean_or_fallback(const InverseGamma& ig);
inline double ig_mean_inverse(const InverseGamma& ig) { return ig.shape / ig.rate; }
double ig_mean_log(const InverseGamma& ig);

/// Mean-field posterior
///   q(f_j) q(sigma_fj^2) q(a_j) prod_i q(W_ij) prod_n q(fhat_nj)  x  q(sigma_y^2).
/// The deterministic site variables (w, f', t, s) are represented through
/// the moments of the factors they are functions of; see site accessors.
struct VariationalPosterior {
  NetworkShape shape;
  std::vector<GaussianFactor> q_f;       ///< per node
  Eigen::MatrixXd w_mean;                ///< N x (p*q), column i*q + j
  std::vector<GaussianFactor> q_w_cov;   ///< per (mask group g, node j): index g*q + j; mean unused
  std::vector<Eigen::Index> output_group;
  Eigen::MatrixXd fhat_mean;             ///< N x q
  Eigen::MatrixXd fhat_var;              ///< N x q
  InverseGamma q_sigma_y2;
  std::vector<InverseGamma> q_sigma_f2;
  std::vector<InverseGamma> q_a;
  bool ard = true;

  const GaussianFactor& w_cov(Eigen::Index i, Eigen::Index j) const {
    return q_w_cov[static_cast<std::size_t>(output_group[static_cast<std::size_t>(i)] * shape.q + j)];
  }
  double w_var(Eigen::Index n, Eigen::Index i, Eigen::Index j) const { return w_cov(i, j).cov(n, n); }
  /// E[1/a_j], or 1/a_j for fixed ARD variances.
  double inv_a(Eigen::Index j) const;
  double log_a(Eigen::Index j) const;

  struct Moments {
    double mean;
    double second;
  };
  /// t_nij = w_nij fhat_nj
  Moments t_site(Eigen::Index n, Eigen::Index i, Eigen::Index j) const;
  /// s_in = sum_j t_nij, returned as (mean, variance).
  std::pair<double, double> s_site(Eigen::Index i, Eigen::Index n) const;
  /// W fbar at the training inputs, N x p.
  Eigen::MatrixXd signal_mean() const;
};

struct VbConfig {
  int max_em_iters = 100;
  int estep_inner_iters = 5;
  double objective_tol = 1e-6;
  int mstep_max_linesearch = 20;
  int mstep_iters = 5;
  int n_restarts = 5;
  std::uint64_t seed = 0;
  double init_std = 0.1;
  bool ard = true;
  bool learn_theta_f = true;
  bool learn_theta_w = true;
  int threads = 1;
};

/// Data and kernel factorizations shared by every update.
struct VbContext {
  Dataset data;
  Hyperparams hyp;
  bool ard = true;
  CholFactor kf;  ///< node gram with unit ARD variance
  CholFactor kw;
  std::vector<Eigen::Index> output_group;
  std::vector<std::vector<Eigen::Index>> groups;  ///< outputs sharing a mask column
  std::vector<bool> active_rows;                  ///< rows with at least one observation
  Eigen::Index n_active = 0;
  Eigen::Index n_obs = 0;

  static VbContext make(const Dataset& data, const Hyperparams& hyp, bool ard);
  void refactor();
  Eigen::Index q() const { return hyp.ard.size(); }
};

VariationalPosterior initialize_posterior(const VbContext& ctx, Rng& rng, double init_std);

/// Evidence lower bound with every normalizing constant included, so it can
/// be compared across node counts.
double elbo(const VbContext& ctx, const VariationalPosterior& post);

void update_fhat(const VbContext& ctx, VariationalPosterior& post);
void update_nodes(const VbContext& ctx, VariationalPosterior& post);
void update_weights(const VbContext& ctx, VariationalPosterior& post);
void update_sigma_f(const VbContext& ctx, VariationalPosterior& post);
void update_sigma_y(const VbContext& ctx, VariationalPosterior& post);
void update_ard(const VbContext& ctx, VariationalPosterior& post);

/// Called after each factor group with its name and the current objective.
using EStepObserver = std::function<void(const std::string& factor, double objective)>;

/// One sweep: fhat -> f -> W -> sigma_f^2 -> sigma_y^2 -> a.
void estep(const VbContext& ctx, VariationalPosterior& post, const EStepObserver& observer = {});

/// posterior N(0, K) times sites with diagonal precision d and linear term b.
GaussianFactor site_posterior(const Eigen::MatrixXd& prior_chol_lower, const Eigen::VectorXd& d,
                              const Eigen::VectorXd& b);

/// mu^T K^{-1} mu + tr(K^{-1} Sigma)
double expected_quadratic(const CholFactor& K, const Eigen::VectorXd& mean,
                          const Eigen::MatrixXd& cov);

struct IgMessage {
  double shape;
  double rate;
  bool degenerate;  ///< shape <= 0; must be combined with a proper prior
};

/// Message from N(f_j; 0, a_j K) to a_j: IG(N/2 - 1, <f^T K^{-1} f>/2).
IgMessage ard_message(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                      const CholFactor& unit_gram);
/// Prior combined with the message: IG(alpha + N/2, beta + rate).
InverseGamma combine_ard(const InverseGamma& prior, const IgMessage& msg);

/// Expected log N(x; 0, K/inv_scale) up to the E[log a] term, for the
/// expected outer product S = E[x x^T] summed over `count` factors:
///   -count/2 log|K| - inv_scale/2 tr(K^{-1} S) - count N/2 log 2 pi.
double expected_log_prior(const CholFactor& K, const Eigen::MatrixXd& S, double inv_scale,
                          double count);
/// Derivative of expected_log_prior along dK:
///   -count/2 tr(K^{-1} dK) + inv_scale/2 tr(K^{-1} dK K^{-1} S).
double expected_log_prior_grad(const CholFactor& K, const Eigen::MatrixXd& dK,
                               const Eigen::MatrixXd& S, double inv_scale, double count);

struct MStepResult {
  double objective_before = 0.0;
  double objective_after = 0.0;
  bool theta_f_moved = false;
  bool theta_w_moved = false;
  std::vector<std::string> warnings;
};

/// Gradient ascent with backtracking on the log length-scales of the node
/// and weight kernels. Updates ctx.hyp and its factorizations.
MStepResult mstep(VbContext& ctx, const VariationalPosterior& post, const VbConfig& config);

struct VbFit {
  VariationalPosterior posterior;
  Hyperparams hyp;  ///< kernels plus point summaries of the noise and ARD posteriors
  Inputs X;
  std::vector<double> objective_trace;
  double objective = 0.0;
  int restart = 0;
  int iterations = 0;
  std::vector<std::string> warnings;
};

/// One restart with sub-stream `restart` of config.seed.
VbFit fit_vb_single(const Dataset& data, Eigen::Index q, const VbConfig& config,
                    const Hyperparams& init_hyp, int restart);
/// Best of config.n_restarts restarts by final objective (ties: lowest index).
VbFit fit_vb(const Dataset& data, Eigen::Index q, const VbConfig& config,
             const Hyperparams& init_hyp);

/// Closed-form predictive moments from per-function moments at x*:
///   mean_i = sum_k E[W_ik] E[f_k]
///   cov_ij = sum_k [E[W_ik]E[W_jk] var(f_k) + d_ij var(W_ik) E[f_k^2]] + d_ij sigma_y^2
PredictiveDistribution vb_predictive_moments(const Eigen::MatrixXd& w_mean,
                                             const Eigen::MatrixXd& w_var,
                                             const Eigen::VectorXd& f_mean,
                                             const Eigen::VectorXd& f_var, double sigma_y2);

///   cov_ij = sum_k E[s_fk^2] (E[W_ik]E[W_jk] + d_ij var(W_ik)) + d_ij sigma_y^2
Eigen::MatrixXd vb_noise_covariance(const Eigen::MatrixXd& w_mean, const Eigen::MatrixXd& w_var,
                                    const Eigen::VectorXd& sigma_f2, double sigma_y2);

/// Moments of W(x*) and fhat(x*) under the fitted posterior.
struct VbPointMoments {
  Eigen::MatrixXd w_mean, w_var;   ///< p x q
  Eigen::VectorXd f_mean, f_var;   ///< noise-free node
  Eigen::VectorXd sigma_f2;        ///< E[sigma_fj^2]
  double sigma_y2 = 0.0;
};

VbPointMoments vb_point_moments(const VbFit& fit, const Eigen::VectorXd& x_star);
PredictiveDistribution predict_vb(const VbFit& fit, const Eigen::VectorXd& x_star);
Eigen::MatrixXd noise_covariance_vb(const VbFit& fit, const Eigen::VectorXd& x_star);

struct ModelSelection {
  Eigen::Index best_q = 0;
  std::vector<std::pair<Eigen::Index, double>> table;  ///< (q, final objective)
  std::vector<VbFit> fits;
};

/// Fits each candidate and keeps the highest objective (ties: smaller q).
ModelSelection model_select_q(const Dataset& data, const std::vector<Eigen::Index>& q_candidates,
                              const VbConfig& config, const Hyperparams& init_hyp);

}  // namespace gprn
