#include "gprn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gprn/errors.hpp"

namespace gprn {

Eigen::MatrixXd CholFactor::solve(const Eigen::MatrixXd& b) const {
  Eigen::MatrixXd x = L.triangularView<Eigen::Lower>().solve(b);
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

Eigen::MatrixXd CholFactor::solve_lower(const Eigen::MatrixXd& b) const {
  return L.triangularView<Eigen::Lower>().solve(b);
}

CholFactor safe_cholesky(const Eigen::MatrixXd& M, const std::string& role) {
  if (M.rows() != M.cols() || M.rows() == 0)
    throw InputError(role + " must be a non-empty square matrix");
  if (!M.allFinite()) throw SingularMatrixError(role + " has non-finite entries");

  const Eigen::MatrixXd S = 0.5 * (M + M.transpose());
  const double scale = S.diagonal().mean();
  const double pivot_floor = 1e-12 * std::abs(scale);

  for (double rung : kJitterLadder) {
    const double jitter = rung * scale;
    Eigen::MatrixXd A = S;
    A.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd L = llt.matrixL();
    if ((L.diagonal().array().square() <= pivot_floor).any()) continue;
    if (!L.allFinite()) continue;
    return CholFactor{std::move(L), jitter};
  }
  throw SingularMatrixError(role + " is not positive definite even with maximal jitter");
}

double BlockPrior::log_det() const {
  double total = 0.0;
  for (Eigen::Index j = 0; j < shape.q; ++j) total += node_chol(j).log_det();
  total += static_cast<double>(shape.p * shape.q) * weight_chol.log_det();
  return total;
}

BlockPrior build_block_prior(const NoisyNodeKernel& kf, const KernelSpec& kw, const Inputs& X,
                             Eigen::Index p, Eigen::Index q) {
  return build_block_prior(std::vector<Eigen::MatrixXd>{noisy_node_gram(kf, X)}, gram(kw, X), p,
                           q);
}

BlockPrior build_block_prior(const std::vector<Eigen::MatrixXd>& node_grams,
                             const Eigen::MatrixXd& weight_gram, Eigen::Index p, Eigen::Index q) {
  if (p < 1 || q < 1) throw InputError("block prior needs p >= 1 and q >= 1");
  if (node_grams.size() != 1 && node_grams.size() != static_cast<std::size_t>(q))
    throw InputError("expected one shared node covariance or one per node");
  BlockPrior prior;
  prior.shape = {weight_gram.rows(), p, q};
  for (std::size_t j = 0; j < node_grams.size(); ++j) {
    if (node_grams[j].rows() != weight_gram.rows())
      throw InputError("node and weight covariances differ in size");
    prior.node_chols.push_back(
        safe_cholesky(node_grams[j], "node covariance K_fhat[" + std::to_string(j) + "]"));
  }
  prior.weight_chol = safe_cholesky(weight_gram, "weight covariance K_w");
  return prior;
}

Eigen::VectorXd prior_sample_from_normals(const BlockPrior& prior, const Eigen::VectorXd& z) {
  const auto& s = prior.shape;
  if (z.size() != s.total())
    throw InputError("standard-normal vector has length " + std::to_string(z.size()) +
                     ", expected " + std::to_string(s.total()));
  Eigen::VectorXd u(s.total());
  for (Eigen::Index j = 0; j < s.q; ++j)
    u.segment(j * s.n, s.n).noalias() =
        prior.node_chol(j).L.triangularView<Eigen::Lower>() * z.segment(j * s.n, s.n);
  const auto& Lw = prior.weight_chol.L;
  for (Eigen::Index b = s.q; b < s.q * (s.p + 1); ++b)
    u.segment(b * s.n, s.n).noalias() = Lw.triangularView<Eigen::Lower>() * z.segment(b * s.n, s.n);
  return u;
}

Eigen::VectorXd prior_sample(const BlockPrior& prior, Rng& rng) {
  return prior_sample_from_normals(prior, standard_normal_vector(rng, prior.shape.total()));
}

Eigen::VectorXd prior_sample(const BlockPrior& prior, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return prior_sample(prior, rng);
}

namespace {

CholFactor noisy_factor(const KernelSpec& spec, double sigma_n, const Inputs& X) {
  if (!(sigma_n >= 0.0)) throw InputError("observation noise must be nonnegative");
  Eigen::MatrixXd K = gram(spec, X);
  K.diagonal().array() += sigma_n * sigma_n;
  return safe_cholesky(K, "GP regression covariance K + sigma_n^2 I");
}

}  // namespace

GpConditioner::GpConditioner(const KernelSpec& spec, double sigma_n, const Inputs& X)
    : spec_(spec), X_(X), factor_(noisy_factor(spec, sigma_n, X)) {}

GpConditioner::GpConditioner(const KernelSpec& spec, const Inputs& X, CholFactor factor)
    : spec_(spec), X_(X), factor_(std::move(factor)) {}

std::pair<Eigen::VectorXd, Eigen::VectorXd> GpConditioner::predict(const Eigen::VectorXd& y,
                                                                   const Inputs& Xs) const {
  if (y.size() != X_.rows()) throw InputError("target length does not match training inputs");
  const Eigen::MatrixXd Ks = cross_gram(spec_, X_, Xs);  // N x M
  const Eigen::VectorXd mean = Ks.transpose() * factor_.solve(y);
  const Eigen::MatrixXd V = factor_.solve_lower(Ks);
  Eigen::VectorXd var = Eigen::VectorXd::Constant(Xs.rows(), spec_.amplitude()) -
                        V.colwise().squaredNorm().transpose();
  var = var.cwiseMax(0.0);
  return {mean, var};
}

GpPrediction gp_posterior(const KernelSpec& spec, double sigma_n, const Inputs& X,
                          const Eigen::VectorXd& y, const Eigen::VectorXd& x_star) {
  GpConditioner cond(spec, sigma_n, X);
  auto [m, v] = cond.predict(y, x_star.transpose());
  return {m(0), v(0)};
}

double gp_log_marginal(const KernelSpec& spec, double sigma_n, const Inputs& X,
                       const Eigen::VectorXd& y) {
  const CholFactor f = noisy_factor(spec, sigma_n, X);
  const Eigen::VectorXd a = f.solve_lower(y);
  return -0.5 * a.squaredNorm() - 0.5 * f.log_det() -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI);
}

namespace {

KernelSpec make_kernel(KernelFamily family, double amplitude, double length) {
  switch (family) {
    case KernelFamily::OrnsteinUhlenbeck:
      return KernelSpec::ornstein_uhlenbeck(amplitude, length);
    case KernelFamily::Matern:
      return KernelSpec::matern(2.5, amplitude, length);
    case KernelFamily::SquaredExponential:
      break;
  }
  return KernelSpec::squared_exponential(amplitude, length);
}

struct Observed {
  Inputs X;
  Eigen::VectorXd y;
  double mean = 0.0;
};

Observed observed_column(const Inputs& X, const Eigen::MatrixXd& Y,
                         const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
                         Eigen::Index col) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index n = 0; n < Y.rows(); ++n)
    if (mask(n, col)) rows.push_back(n);
  if (rows.empty()) throw InputError("output " + std::to_string(col) + " has no observations");
  Observed o;
  o.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  o.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    o.X.row(static_cast<Eigen::Index>(k)) = X.row(rows[k]);
    o.y(static_cast<Eigen::Index>(k)) = Y(rows[k], col);
  }
  o.mean = o.y.mean();
  o.y.array() -= o.mean;
  return o;
}

double input_span(const Inputs& X) {
  double span = 0.0;
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    span = std::max(span, X.col(c).maxCoeff() - X.col(c).minCoeff());
  return span > 0.0 ? span : 1.0;
}

}  // namespace

IndependentGpFit fit_independent_gps(const Inputs& X, const Eigen::MatrixXd& Y,
                                     const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask,
                                     KernelFamily family) {
  IndependentGpFit fit;
  const double span = input_span(X);
  for (Eigen::Index i = 0; i < Y.cols(); ++i) {
    const Observed o = observed_column(X, Y, mask, i);
    const double var = std::max(o.y.squaredNorm() / static_cast<double>(o.y.size()), 1e-12);

    // log-parameters: amplitude, length-scale, noise std
    Eigen::Vector3d best(std::log(var), std::log(0.2 * span), std::log(0.3 * std::sqrt(var)));
    double best_lml = -std::numeric_limits<double>::infinity();
    auto score = [&](const Eigen::Vector3d& t) {
      try {
        return gp_log_marginal(make_kernel(family, std::exp(t(0)), std::exp(t(1))),
                               std::exp(t(2)), o.X, o.y);
      } catch (const Error&) {
        return -std::numeric_limits<double>::infinity();
      }
    };
    for (int a = -2; a <= 2; ++a)
      for (int l = -4; l <= 4; ++l)
        for (int s = -4; s <= 2; ++s) {
          const Eigen::Vector3d t(std::log(var) + a * 0.8, std::log(span) + l * 0.55 - 1.0,
                                  0.5 * std::log(var) + s * 0.8);
          const double v = score(t);
          if (v > best_lml) {
            best_lml = v;
            best = t;
          }
        }
    // coordinate pattern search
    for (double step = 0.4; step > 1e-3; step *= 0.5) {
      bool improved = true;
      while (improved) {
        improved = false;
        for (int c = 0; c < 3; ++c)
          for (double sgn : {-1.0, 1.0}) {
            Eigen::Vector3d t = best;
            t(c) += sgn * step;
            const double v = score(t);
            if (v > best_lml + 1e-12) {
              best_lml = v;
              best = t;
              improved = true;
            }
          }
      }
    }
    fit.kernels.push_back(make_kernel(family, std::exp(best(0)), std::exp(best(1))));
    fit.noise_std.push_back(std::exp(best(2)));
  }
  return fit;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> predict_independent_gps(
    const IndependentGpFit& fit, const Inputs& X, const Eigen::MatrixXd& Y,
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask, const Inputs& Xs) {
  const Eigen::Index p = Y.cols();
  if (static_cast<Eigen::Index>(fit.kernels.size()) != p)
    throw InputError("baseline fit has the wrong number of outputs");
  Eigen::MatrixXd mean(Xs.rows(), p), var(Xs.rows(), p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const Observed o = observed_column(X, Y, mask, i);
    const auto k = static_cast<std::size_t>(i);
    GpConditioner cond(fit.kernels[k], fit.noise_std[k], o.X);
    auto [m, v] = cond.predict(o.y, Xs);
    mean.col(i) = m.array() + o.mean;
    var.col(i) = v;
  }
  return {mean, var};
}

}  // namespace gprn
