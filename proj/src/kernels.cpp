#include "gprn/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <cctype>
#include <cstdlib>
#include <string>
#include <vector>

#include "gprn/errors.hpp"

namespace gprn {
namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw InputError(std::string("kernel ") + what + " must be positive and finite, got " +
                     std::to_string(v));
  }
}

bool near(double a, double b) { return std::abs(a - b) < 1e-15; }

double matern_general(double alpha, double amplitude, double z) {
  if (z < 1e-12) return amplitude;
  const double log_coef = (1.0 - alpha) * std::log(2.0) - std::lgamma(alpha);
  const double value = std::exp(log_coef + alpha * std::log(z)) * std::cyl_bessel_k(alpha, z);
  return amplitude * value;
}

}  // namespace

KernelSpec::KernelSpec(KernelFamily family, double amplitude, double length_scale, double alpha)
    : family_(family), amplitude_(amplitude), length_scale_(length_scale), alpha_(alpha) {
  require_positive(amplitude, "amplitude");
  require_positive(length_scale, "length-scale");
  require_positive(alpha, "matern alpha");
}

KernelSpec KernelSpec::squared_exponential(double amplitude, double length_scale) {
  return KernelSpec(KernelFamily::SquaredExponential, amplitude, length_scale, 1.0);
}

KernelSpec KernelSpec::ornstein_uhlenbeck(double amplitude, double length_scale) {
  return KernelSpec(KernelFamily::OrnsteinUhlenbeck, amplitude, length_scale, 0.5);
}

KernelSpec KernelSpec::matern(double alpha, double amplitude, double length_scale) {
  return KernelSpec(KernelFamily::Matern, amplitude, length_scale, alpha);
}

KernelSpec KernelSpec::with_amplitude(double amplitude) const {
  return KernelSpec(family_, amplitude, length_scale_, alpha_);
}

KernelSpec KernelSpec::with_length_scale(double length_scale) const {
  return KernelSpec(family_, amplitude_, length_scale, alpha_);
}

double KernelSpec::at_distance(double r) const {
  const double l = length_scale_;
  switch (family_) {
    case KernelFamily::SquaredExponential:
      return amplitude_ * std::exp(-0.5 * r * r / (l * l));
    case KernelFamily::OrnsteinUhlenbeck:
      return amplitude_ * std::exp(-r / l);
    case KernelFamily::Matern: {
      if (near(alpha_, 0.5)) return amplitude_ * std::exp(-r / l);
      if (near(alpha_, 1.5)) {
        const double s = std::sqrt(3.0) * r / l;
        return amplitude_ * (1.0 + s) * std::exp(-s);
      }
      if (near(alpha_, 2.5)) {
        const double s = std::sqrt(5.0) * r / l;
        return amplitude_ * (1.0 + s + s * s / 3.0) * std::exp(-s);
      }
      return matern_general(alpha_, amplitude_, std::sqrt(2.0 * alpha_) * r / l);
    }
  }
  return 0.0;
}

double KernelSpec::dlog_length_at_distance(double r) const {
  const double l = length_scale_;
  switch (family_) {
    case KernelFamily::SquaredExponential:
      return at_distance(r) * r * r / (l * l);
    case KernelFamily::OrnsteinUhlenbeck:
      return at_distance(r) * r / l;
    case KernelFamily::Matern: {
      if (near(alpha_, 0.5)) return at_distance(r) * r / l;
      if (near(alpha_, 1.5)) {
        const double s = std::sqrt(3.0) * r / l;
        return amplitude_ * s * s * std::exp(-s);
      }
      if (near(alpha_, 2.5)) {
        const double s = std::sqrt(5.0) * r / l;
        return amplitude_ * s * s * (1.0 + s) / 3.0 * std::exp(-s);
      }
      // d/dz [z^a K_a(z)] = -z^a K_{a-1}(z) and dz/dlog l = -z.
      const double z = std::sqrt(2.0 * alpha_) * r / l;
      if (z < 1e-12) return 0.0;
      const double log_coef = (1.0 - alpha_) * std::log(2.0) - std::lgamma(alpha_);
      return amplitude_ * std::exp(log_coef + (alpha_ + 1.0) * std::log(z)) *
             std::cyl_bessel_k(std::abs(alpha_ - 1.0), z);
    }
  }
  return 0.0;
}

double evaluate(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                const Eigen::Ref<const Eigen::VectorXd>& x_prime) {
  if (x.size() != x_prime.size()) {
    throw InputError("kernel inputs differ in dimension: " + std::to_string(x.size()) + " vs " +
                     std::to_string(x_prime.size()));
  }
  if (!x.allFinite() || !x_prime.allFinite()) throw InputError("kernel input is not finite");
  return spec.at_distance((x - x_prime).norm());
}

namespace {

template <typename F>
Eigen::MatrixXd pairwise(const Inputs& X, const Inputs& Z, F&& f) {
  if (X.cols() != Z.cols()) throw InputError("input matrices differ in dimension");
  if (!X.allFinite() || !Z.allFinite()) throw InputError("kernel input is not finite");
  Eigen::MatrixXd K(X.rows(), Z.rows());
  for (Eigen::Index j = 0; j < Z.rows(); ++j)
    for (Eigen::Index i = 0; i < X.rows(); ++i) K(i, j) = f((X.row(i) - Z.row(j)).norm());
  return K;
}

template <typename F>
Eigen::MatrixXd symmetric_pairwise(const Inputs& X, F&& f) {
  if (!X.allFinite()) throw InputError("kernel input is not finite");
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    K(j, j) = f(0.0);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      K(i, j) = f((X.row(i) - X.row(j)).norm());
      K(j, i) = K(i, j);
    }
  }
  return K;
}

}  // namespace

Eigen::MatrixXd gram(const KernelSpec& spec, const Inputs& X) {
  return symmetric_pairwise(X, [&](double r) { return spec.at_distance(r); });
}

Eigen::MatrixXd cross_gram(const KernelSpec& spec, const Inputs& X, const Inputs& Z) {
  return pairwise(X, Z, [&](double r) { return spec.at_distance(r); });
}

Eigen::MatrixXd gram_dlog_length(const KernelSpec& spec, const Inputs& X) {
  return symmetric_pairwise(X, [&](double r) { return spec.dlog_length_at_distance(r); });
}

Eigen::MatrixXd noisy_node_gram(const NoisyNodeKernel& k, const Inputs& X) {
  if (k.sigma_f < 0.0 || !std::isfinite(k.sigma_f))
    throw InputError("node noise sigma_f must be nonnegative");
  Eigen::MatrixXd K = gram(k.base, X);
  K.diagonal().array() += k.sigma_f * k.sigma_f;
  return K;
}

KernelSpec parse_kernel(std::string_view text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  const auto open = s.find('(');
  if (open == std::string::npos || s.empty() || s.back() != ')')
    throw ParseError("malformed kernel specification '" + std::string(text) + "'");
  std::string name = s.substr(0, open);
  for (char& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const std::string body = s.substr(open + 1, s.size() - open - 2);

  std::vector<double> args;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto comma = body.find(',', pos);
    if (comma == std::string::npos) comma = body.size();
    const std::string token = body.substr(pos, comma - pos);
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (token.empty() || end != token.c_str() + token.size())
      throw ParseError("invalid kernel argument '" + token + "' in '" + std::string(text) + "'");
    args.push_back(v);
    pos = comma + 1;
  }

  auto want = [&](std::size_t n) {
    if (args.size() != n)
      throw ParseError("kernel '" + name + "' expects " + std::to_string(n) + " arguments, got " +
                       std::to_string(args.size()));
  };
  try {
    if (name == "se") {
      want(2);
      return KernelSpec::squared_exponential(args[0], args[1]);
    }
    if (name == "ou") {
      want(2);
      return KernelSpec::ornstein_uhlenbeck(args[0], args[1]);
    }
    if (name == "matern") {
      want(3);
      return KernelSpec::matern(args[0], args[1], args[2]);
    }
  } catch (const ParseError&) {
    throw;
  } catch (const InputError& e) {
    throw ParseError(std::string(e.what()) + " in '" + std::string(text) + "'");
  }
  throw ParseError("unknown kernel family '" + name + "'");
}

std::string format_kernel(const KernelSpec& spec) {
  char buf[128];
  switch (spec.family()) {
    case KernelFamily::SquaredExponential:
      std::snprintf(buf, sizeof buf, "se(%.17g,%.17g)", spec.amplitude(), spec.length_scale());
      break;
    case KernelFamily::OrnsteinUhlenbeck:
      std::snprintf(buf, sizeof buf, "ou(%.17g,%.17g)", spec.amplitude(), spec.length_scale());
      break;
    case KernelFamily::Matern:
      std::snprintf(buf, sizeof buf, "matern(%.17g,%.17g,%.17g)", spec.matern_alpha(),
                    spec.amplitude(), spec.length_scale());
      break;
  }
  return buf;
}

}  // namespace gprn
