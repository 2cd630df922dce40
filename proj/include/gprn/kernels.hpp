#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

namespace gprn {

enum class KernelFamily { SquaredExponential, OrnsteinUhlenbeck, Matern };

/// Stationary isotropic covariance function with amplitude A and length-scale l.
///
/// SE:     A exp(-r^2 / (2 l^2))
/// OU:     A exp(-r / l)
/// Matern: A 2^(1-alpha)/Gamma(alpha) z^alpha K_alpha(z),  z = sqrt(2 alpha) r / l
///
/// r is the Euclidean distance between the inputs. Instances are validated on
/// construction and immutable afterwards.
class KernelSpec {
 public:
  static KernelSpec squared_exponential(double amplitude, double length_scale);
  static KernelSpec ornstein_uhlenbeck(double amplitude, double length_scale);
  static KernelSpec matern(double alpha, double amplitude, double length_scale);

  KernelFamily family() const { return family_; }
  double amplitude() const { return amplitude_; }
  double length_scale() const { return length_scale_; }
  double matern_alpha() const { return alpha_; }

  KernelSpec with_amplitude(double amplitude) const;
  KernelSpec with_length_scale(double length_scale) const;

  /// k as a function of distance r >= 0.
  double at_distance(double r) const;
  /// dk/d(log l) as a function of distance.
  double dlog_length_at_distance(double r) const;

  bool operator==(const KernelSpec&) const = default;

 private:
  KernelSpec(KernelFamily family, double amplitude, double length_scale, double alpha);

  KernelFamily family_;
  double amplitude_;
  double length_scale_;
  double alpha_;
};

/// k(f) plus independent node noise: k(x,x') + sigma_f^2 [same evaluation].
struct NoisyNodeKernel {
  KernelSpec base;
  double sigma_f = 0.0;
};

/// Inputs are stored one point per row.
using Inputs = Eigen::MatrixXd;

double evaluate(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                const Eigen::Ref<const Eigen::VectorXd>& x_prime);

Eigen::MatrixXd gram(const KernelSpec& spec, const Inputs& X);
/// Cross-covariance K(X, Z), rows indexed by X.
Eigen::MatrixXd cross_gram(const KernelSpec& spec, const Inputs& X, const Inputs& Z);
/// Elementwise dK/d(log l).
Eigen::MatrixXd gram_dlog_length(const KernelSpec& spec, const Inputs& X);

/// Noise is added on the diagonal only: each evaluation carries its own draw,
/// so duplicated inputs still get independent noise.
Eigen::MatrixXd noisy_node_gram(const NoisyNodeKernel& k, const Inputs& X);

/// `se(A,l)`, `ou(A,l)`, `matern(alpha,A,l)`.
KernelSpec parse_kernel(std::string_view text);
/// Inverse of parse_kernel, printing 17 significant digits.
std::string format_kernel(const KernelSpec& spec);

}  // namespace gprn
