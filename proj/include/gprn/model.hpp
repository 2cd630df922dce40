#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "gprn/kernels.hpp"
#include "gprn/linalg.hpp"
#include "gprn/rng.hpp"

namespace gprn {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct NetworkShape {
  Eigen::Index n = 1;  ///< training inputs
  Eigen::Index p = 1;  ///< outputs
  Eigen::Index q = 1;  ///< nodes
  Eigen::Index d = 1;  ///< input dimension

  Eigen::Index packed_size() const { return n * q * (p + 1); }
  BlockShape block_shape() const { return {n, p, q}; }
  void validate() const;
};

/// Node and weight function values at the training inputs.
///
/// `w` is N x (p*q); column i*q + j holds W_ij over the inputs, so row n
/// reshaped row-major is W(x_n). Packing into u concatenates the q node
/// columns followed by the p*q weight columns.
struct NetworkParams {
  Eigen::MatrixXd fhat;
  Eigen::MatrixXd w;

  Eigen::Index n() const { return fhat.rows(); }
  Eigen::Index q() const { return fhat.cols(); }
  Eigen::Index p() const { return q() ? w.cols() / q() : 0; }

  double weight(Eigen::Index n, Eigen::Index i, Eigen::Index j) const { return w(n, i * q() + j); }
  /// W(x_n) as a p x q matrix.
  Eigen::MatrixXd weights_at(Eigen::Index n) const;
};

Eigen::VectorXd pack(const NetworkParams& params);
NetworkParams unpack(const Eigen::VectorXd& u, const NetworkShape& shape);

struct InverseGamma {
  double shape = 1.0;
  double rate = 1.0;
};

struct InverseGammaPriors {
  InverseGamma sigma_f2{1.0, 1.0};
  InverseGamma sigma_y2{1.0, 1.0};
  InverseGamma ard{1.0, 1.0};
};

struct Hyperparams {
  KernelSpec theta_f = KernelSpec::squared_exponential(1.0, 1.0);
  KernelSpec theta_w = KernelSpec::squared_exponential(1.0, 1.0);
  double sigma_f = 0.1;
  double sigma_y = 0.1;
  Eigen::VectorXd ard = Eigen::VectorXd::Ones(1);
  InverseGammaPriors priors;

  /// Default hyperparameters sized for q nodes.
  static Hyperparams defaults(Eigen::Index q);
  void validate(Eigen::Index q) const;
};

/// Sum over observed (n, i) of log N(y_i(x_n); [W(x_n) fhat(x_n)]_i, sigma_y^2).
/// Cost is O(N p q); `mult_adds`, when given, receives the number of
/// multiply-adds performed.
double log_likelihood(const Eigen::Ref<const Eigen::MatrixXd>& fhat,
                      const Eigen::Ref<const Eigen::MatrixXd>& w, const Eigen::MatrixXd& Y,
                      const Mask& mask, double sigma_y, bool exp_weights = false,
                      std::size_t* mult_adds = nullptr);
double log_likelihood(const NetworkParams& params, const Eigen::MatrixXd& Y, const Mask& mask,
                      double sigma_y);

/// Adaptive output kernel k_yi(x, x') for one output row i. `w_x` and
/// `w_xp` hold W_i.(x) and W_i.(x'); `same_evaluation` plays the role of the
/// Kronecker delta. Node kernels are scaled by the ARD variances.
double mixing_kernel(const Hyperparams& hyp, const Eigen::VectorXd& w_x,
                     const Eigen::VectorXd& w_xp, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& x_prime, bool same_evaluation);

/// sigma_f^2 W W^T + sigma_y^2 I, exactly symmetric.
Eigen::MatrixXd noise_covariance(const Eigen::MatrixXd& W, double sigma_f, double sigma_y);

struct Decomposition {
  Eigen::VectorXd signal;
  Eigen::VectorXd noise;
  Eigen::VectorXd y;
};

/// signal = W f, noise = sigma_f W eps + sigma_y z with fresh eps, z.
Decomposition decompose(const Eigen::MatrixXd& W, const Eigen::VectorXd& f, double sigma_f,
                        double sigma_y, Rng& rng);

/// a * K. Throws for a <= 0.
Eigen::MatrixXd apply_ard(const Eigen::MatrixXd& node_gram, double a);

/// Params with every weight replaced by exp(w).
NetworkParams exp_weight_transform(const NetworkParams& params);

/// Covariance of fhat_j at X: a_j K_f + sigma_f^2 I.
Eigen::MatrixXd node_covariance(const Hyperparams& hyp, const Inputs& X, Eigen::Index j);

/// Block prior for the packed vector; shares one node factor when all ARD
/// variances are equal.
BlockPrior build_network_prior(const Hyperparams& hyp, const Inputs& X, Eigen::Index p,
                               Eigen::Index q);

}  // namespace gprn
