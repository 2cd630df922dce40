#include "gprn/mcmc.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "gprn/errors.hpp"

namespace gprn {

void McmcConfig::validate() const {
  if (n_burnin < 0 || n_samples < 0) throw InputError("MCMC sample counts must be >= 0");
  if (thin < 1) throw InputError("MCMC thin must be >= 1");
  if (shrink_cap < 1) throw InputError("MCMC shrink cap must be >= 1");
}

EssResult ess_step(const Eigen::VectorXd& current, double current_loglik, const BlockPrior& prior,
                   const LogLikelihood& loglik, Rng& rng, const EssHooks& hooks, int shrink_cap) {
  if (!std::isfinite(current_loglik)) throw InputError("ESS needs a finite current log-likelihood");
  if (current.size() != prior.shape.total()) throw InputError("ESS state has the wrong length");
  constexpr double two_pi = 2.0 * std::numbers::pi;

  EssResult res;
  res.nu = prior_sample(prior, rng);
  res.log_threshold = current_loglik + std::log(uniform01(rng));
  double theta = hooks.angle ? *hooks.angle : two_pi * (1.0 - uniform01(rng));
  double lo = theta - two_pi, hi = theta;
  for (;;) {
    res.u = current * std::cos(theta) + res.nu * std::sin(theta);
    res.loglik = loglik(res.u);
    if (std::isfinite(res.loglik) && res.loglik > res.log_threshold) return res;
    if (++res.shrinks >= shrink_cap)
      throw StepFailure("elliptical slice sampling exceeded " + std::to_string(shrink_cap) +
                        " bracket shrinks");
    if (theta < 0.0) lo = theta; else hi = theta;
    theta = lo + (hi - lo) * (1.0 - uniform01(rng));
  }
}

LogLikelihood network_loglik(const Dataset& data, const NetworkShape& shape, double sigma_y,
                             bool positive_weights) {
  const Eigen::Index n = shape.n, q = shape.q, p = shape.p;
  return [&data, n, q, p, sigma_y, positive_weights](const Eigen::VectorXd& u) {
    const Eigen::Map<const Eigen::MatrixXd> fhat(u.data(), n, q);
    const Eigen::Map<const Eigen::MatrixXd> w(u.data() + n * q, n, p * q);
    return log_likelihood(fhat, w, data.Y, data.mask, sigma_y, positive_weights);
  };
}

McmcChain run_chain(const Dataset& data, const Hyperparams& hyp, Eigen::Index q,
                    const McmcConfig& config, const std::optional<Eigen::VectorXd>& initial) {
  config.validate();
  data.validate();
  hyp.validate(q);
  const NetworkShape shape{data.n(), data.p(), q, data.d()};
  shape.validate();

  McmcChain chain;
  chain.shape = shape;
  chain.X = data.X;
  chain.positive_weights = config.positive_weights;
  const BlockPrior prior = build_network_prior(hyp, data.X, data.p(), q);
  const LogLikelihood loglik = network_loglik(data, shape, hyp.sigma_y, config.positive_weights);

  Rng rng = make_rng(config.seed, 0);
  Eigen::VectorXd u = initial ? *initial : prior_sample(prior, rng);
  if (u.size() != shape.packed_size()) throw InputError("initial MCMC state has the wrong length");
  double ll = loglik(u);
  if (!std::isfinite(ll)) throw InputError("initial MCMC state has a non-finite log-likelihood");

  const long total = static_cast<long>(config.n_burnin) + static_cast<long>(config.n_samples) * config.thin;
  chain.samples.reserve(static_cast<std::size_t>(config.n_samples));
  for (long step = 0; step < total; ++step) {
    EssResult r = ess_step(u, ll, prior, loglik, rng, {}, config.shrink_cap);
    u = std::move(r.u);
    ll = r.loglik;
    chain.shrink_counts.push_back(r.shrinks);
    const long kept = step - config.n_burnin + 1;
    if (kept > 0 && kept % config.thin == 0) {
      chain.samples.push_back(unpack(u, shape));
      chain.log_liks.push_back(ll);
    }
  }
  return chain;
}

namespace {

/// Conditional GP moments of one function at Xs for every sample.
struct FunctionConditional {
  Eigen::MatrixXd means;     ///< M x S
  Eigen::VectorXd variance;  ///< M
};

FunctionConditional condition(const KernelSpec& spec, double sigma_n, const Inputs& X,
                              const Eigen::MatrixXd& values, const Inputs& Xs) {
  const GpConditioner gp(spec, sigma_n, X);
  FunctionConditional c;
  c.means = cross_gram(spec, X, Xs).transpose() * gp.factor().solve(values);
  c.variance = gp.predict(Eigen::VectorXd::Zero(X.rows()), Xs).second;
  return c;
}

struct ChainConditionals {
  std::vector<FunctionConditional> nodes;    ///< per j
  std::vector<FunctionConditional> weights;  ///< per column i*q + j
};

ChainConditionals chain_conditionals(const McmcChain& chain, const Hyperparams& hyp,
                                     const Inputs& Xs) {
  if (chain.samples.empty()) throw InputError("MCMC prediction needs a non-empty chain");
  if (Xs.cols() != chain.X.cols()) throw InputError("test inputs have the wrong dimension");
  const auto S = static_cast<Eigen::Index>(chain.samples.size());
  const Eigen::Index n = chain.shape.n, p = chain.shape.p, q = chain.shape.q;
  hyp.validate(q);
  ChainConditionals cc;
  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::MatrixXd vals(n, S);
    for (Eigen::Index s = 0; s < S; ++s) vals.col(s) = chain.samples[static_cast<std::size_t>(s)].fhat.col(j);
    const KernelSpec spec = hyp.theta_f.with_amplitude(hyp.theta_f.amplitude() * hyp.ard(j));
    cc.nodes.push_back(condition(spec, hyp.sigma_f, chain.X, vals, Xs));
  }
  for (Eigen::Index c = 0; c < p * q; ++c) {
    Eigen::MatrixXd vals(n, S);
    for (Eigen::Index s = 0; s < S; ++s) vals.col(s) = chain.samples[static_cast<std::size_t>(s)].w.col(c);
    cc.weights.push_back(condition(hyp.theta_w, 0.0, chain.X, vals, Xs));
  }
  return cc;
}

}  // namespace

std::vector<PredictiveDistribution> predict_mcmc(const McmcChain& chain, const Hyperparams& hyp,
                                                 const Inputs& Xs, int n_mix, std::uint64_t seed) {
  if (n_mix < 1) throw InputError("n_mix must be >= 1");
  const ChainConditionals cc = chain_conditionals(chain, hyp, Xs);
  const Eigen::Index p = chain.shape.p, q = chain.shape.q;
  const auto S = static_cast<Eigen::Index>(chain.samples.size());

  std::vector<PredictiveDistribution> out;
  out.reserve(static_cast<std::size_t>(Xs.rows()));
  for (Eigen::Index m = 0; m < Xs.rows(); ++m) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(m));
    std::vector<GaussianComponent> comps;
    comps.reserve(static_cast<std::size_t>(S * n_mix));
    for (Eigen::Index s = 0; s < S; ++s)
      for (int r = 0; r < n_mix; ++r) {
        Eigen::VectorXd f(q);
        for (Eigen::Index j = 0; j < q; ++j) {
          const auto& c = cc.nodes[static_cast<std::size_t>(j)];
          f(j) = c.means(m, s) + std::sqrt(c.variance(m)) * standard_normal(rng);
        }
        Eigen::MatrixXd W(p, q);
        for (Eigen::Index i = 0; i < p; ++i)
          for (Eigen::Index j = 0; j < q; ++j) {
            const auto& c = cc.weights[static_cast<std::size_t>(i * q + j)];
            const double w = c.means(m, s) + std::sqrt(c.variance(m)) * standard_normal(rng);
            W(i, j) = chain.positive_weights ? std::exp(w) : w;
          }
        comps.push_back({W * f, noise_covariance(W, hyp.sigma_f, hyp.sigma_y)});
      }
    out.push_back(gaussian_mixture(std::move(comps)));
  }
  return out;
}

PredictiveDistribution predict_mcmc(const McmcChain& chain, const Hyperparams& hyp,
                                    const Eigen::VectorXd& x_star, int n_mix, std::uint64_t seed) {
  return predict_mcmc(chain, hyp, Inputs(x_star.transpose()), n_mix, seed).front();
}

std::vector<Eigen::MatrixXd> noise_covariance_mcmc(const McmcChain& chain, const Hyperparams& hyp,
                                                   const Inputs& Xs) {
  const ChainConditionals cc = chain_conditionals(chain, hyp, Xs);
  const Eigen::Index p = chain.shape.p, q = chain.shape.q;
  const auto S = static_cast<Eigen::Index>(chain.samples.size());
  const double sf2 = hyp.sigma_f * hyp.sigma_f, sy2 = hyp.sigma_y * hyp.sigma_y;

  std::vector<Eigen::MatrixXd> out;
  for (Eigen::Index m = 0; m < Xs.rows(); ++m) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index s = 0; s < S; ++s) {
      // E[W_ak W_bk] under the conditional, weights independent across (i, k)
      Eigen::MatrixXd mean(p, q), second(p, q);
      for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index k = 0; k < q; ++k) {
          const auto& c = cc.weights[static_cast<std::size_t>(i * q + k)];
          const double mu = c.means(m, s), v = c.variance(m);
          if (chain.positive_weights) {
            mean(i, k) = std::exp(mu + 0.5 * v);
            second(i, k) = std::exp(2.0 * mu + 2.0 * v);
          } else {
            mean(i, k) = mu;
            second(i, k) = mu * mu + v;
          }
        }
      Eigen::MatrixXd E = mean * mean.transpose();
      for (Eigen::Index i = 0; i < p; ++i) E(i, i) = second.row(i).sum();
      acc += E;
    }
    Eigen::MatrixXd cov = sf2 * acc / static_cast<double>(S);
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += sy2;
    out.push_back(std::move(cov));
  }
  return out;
}

Eigen::MatrixXd posterior_signal_mean(const McmcChain& chain, const Hyperparams& hyp) {
  if (chain.samples.empty()) throw InputError("posterior signal needs a non-empty chain");
  const Eigen::Index n = chain.shape.n, p = chain.shape.p, q = chain.shape.q;
  std::vector<Eigen::MatrixXd> smoothers;
  for (Eigen::Index j = 0; j < q; ++j) {
    const Eigen::MatrixXd K = apply_ard(gram(hyp.theta_f, chain.X), hyp.ard(j));
    const CholFactor C = safe_cholesky(node_covariance(hyp, chain.X, j), "node covariance");
    smoothers.push_back(K * C.solve(Eigen::MatrixXd::Identity(n, n)));
  }
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, p);
  for (const auto& s : chain.samples) {
    for (Eigen::Index j = 0; j < q; ++j) {
      const Eigen::VectorXd f = smoothers[static_cast<std::size_t>(j)] * s.fhat.col(j);
      for (Eigen::Index i = 0; i < p; ++i) {
        const Eigen::ArrayXd w = chain.positive_weights ? Eigen::ArrayXd(s.w.col(i * q + j).array().exp())
                                                        : Eigen::ArrayXd(s.w.col(i * q + j).array());
        acc.col(i).array() += w * f.array();
      }
    }
  }
  return acc / static_cast<double>(chain.samples.size());
}

}  // namespace gprn
