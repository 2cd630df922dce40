#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "gprn/data_io.hpp"
#include "gprn/model.hpp"

namespace gprn {

/// A dataset drawn from the generative model with its latent functions kept.
struct SyntheticTruth {
  Eigen::MatrixXd f;        ///< N x q noise-free node values
  Eigen::MatrixXd w;        ///< N x (p*q), same layout as NetworkParams::w
  Eigen::MatrixXd signal;   ///< N x p, W(x) f(x)
  Eigen::MatrixXd noise;    ///< N x p realized noise
  Hyperparams hyp;
  Dataset dataset;

  Eigen::MatrixXd weights_at(Eigen::Index n) const;
};

/// N equally spaced points filling [0,1]^d (a tensor grid truncated to N rows).
Inputs default_grid(Eigen::Index n, Eigen::Index d);

/// Draws f_j ~ GP(0, a_j k_f) and W_ij ~ GP(0, k_w) at X, then
/// y = W f + sigma_f W eps + sigma_y z. Deterministic in `seed`.
SyntheticTruth generate(const NetworkShape& shape, const Hyperparams& hyp, const Inputs& X,
                        std::uint64_t seed);

/// Same W and f, fresh noise.
SyntheticTruth regenerate_noise(const SyntheticTruth& truth, std::uint64_t seed);

}  // namespace gprn
