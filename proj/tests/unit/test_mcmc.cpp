#include <doctest.h>

#include <cmath>
#include <numbers>

#include "gprn/errors.hpp"
#include "gprn/mcmc.hpp"
#include "gprn/metrics.hpp"
#include "gprn/synthetic.hpp"
#include "support.hpp"

using namespace gprn;

namespace {

BlockPrior small_prior(Eigen::Index n, Eigen::Index p, Eigen::Index q) {
  Hyperparams h = Hyperparams::defaults(q);
  h.theta_f = KernelSpec::squared_exponential(1, 0.5);
  h.theta_w = KernelSpec::squared_exponential(1, 0.7);
  return build_network_prior(h, default_grid(n, 1), p, q);
}

const LogLikelihood flat = [](const Eigen::VectorXd&) { return 0.0; };

}  // namespace

TEST_SUITE("mcmc") {
  TEST_CASE("forced angles") {
    const BlockPrior prior = small_prior(3, 1, 1);
    Rng rng = make_rng(1);
    const Eigen::VectorXd u = prior_sample(prior, rng);
    const EssResult a = ess_step(u, 0.0, prior, flat, rng, {0.0});
    CHECK(a.u == u);
    const EssResult b = ess_step(u, 0.0, prior, flat, rng, {std::numbers::pi / 2});
    CHECK((b.u - b.nu).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("accepted states clear the threshold") {
    const BlockPrior prior = small_prior(4, 2, 1);
    Rng rng = make_rng(2);
    const LogLikelihood ll = [](const Eigen::VectorXd& u) { return -0.5 * u.squaredNorm() * 4.0; };
    Eigen::VectorXd u = prior_sample(prior, rng);
    double l = ll(u);
    for (int s = 0; s < 500; ++s) {
      const EssResult r = ess_step(u, l, prior, ll, rng);
      CHECK(r.loglik > r.log_threshold);
      CHECK(r.loglik == ll(r.u));
      u = r.u;
      l = r.loglik;
    }
  }

  TEST_CASE("step failure after the shrink cap") {
    const BlockPrior prior = small_prior(2, 1, 1);
    Rng rng = make_rng(3);
    const Eigen::VectorXd u = prior_sample(prior, rng);
    // the current state claims a finite likelihood that no proposal reaches
    const LogLikelihood nowhere = [](const Eigen::VectorXd&) { return -std::numeric_limits<double>::infinity(); };
    CHECK_THROWS_AS(ess_step(u, 0.0, prior, nowhere, rng, {}, 100), StepFailure);
    CHECK_THROWS_AS(ess_step(u, std::nan(""), prior, flat, rng), InputError);
  }

  TEST_CASE("constant likelihood preserves the prior") {
    const BlockPrior prior = small_prior(3, 1, 1);
    Rng rng = make_rng(4);
    Eigen::VectorXd u = prior_sample(prior, rng);
    std::vector<Eigen::VectorXd> draws;
    for (int s = 0; s < 20000; ++s) {
      u = ess_step(u, 0.0, prior, flat, rng).u;
      draws.push_back(u);
    }
    const Eigen::MatrixXd C = testing::sample_covariance(draws);
    for (Eigen::Index k = 0; k < 3; ++k) {
      CHECK(C(k, k) == doctest::Approx(prior.node_chol(0).reconstruct()(k, k)).epsilon(0.1));
      CHECK(C(3 + k, 3 + k) == doctest::Approx(prior.weight_chol.reconstruct()(k, k)).epsilon(0.1));
    }
  }

  TEST_CASE("chains") {
    Hyperparams h = Hyperparams::defaults(1);
    h.theta_f = KernelSpec::squared_exponential(1, 0.4);
    h.theta_w = KernelSpec::squared_exponential(1, 0.6);
    const auto truth = generate({10, 2, 1, 1}, h, default_grid(10, 1), 12);

    McmcConfig empty;
    empty.n_samples = 0;
    empty.n_burnin = 10;
    const McmcChain e = run_chain(truth.dataset, h, 1, empty);
    CHECK(e.samples.empty());
    CHECK(e.log_liks.empty());

    McmcConfig c;
    c.n_burnin = 200;
    c.n_samples = 100;
    c.thin = 3;
    c.seed = 5;
    const McmcChain a = run_chain(truth.dataset, h, 1, c);
    const McmcChain b = run_chain(truth.dataset, h, 1, c);
    REQUIRE(a.samples.size() == 100);
    CHECK(a.shrink_counts.size() == 200 + 300);
    CHECK(a.log_liks == b.log_liks);
    CHECK(pack(a.samples.back()) == pack(b.samples.back()));
    for (double l : a.log_liks) CHECK(std::isfinite(l));

    Eigen::MatrixXd sig = Eigen::MatrixXd::Zero(10, 2);
    for (const auto& s : a.samples)
      for (Eigen::Index n = 0; n < 10; ++n) sig.row(n) += (s.weights_at(n) * s.fhat.row(n).transpose()).transpose();
    sig /= static_cast<double>(a.samples.size());
    const double mse_post = (sig - truth.signal).squaredNorm();
    const double mse_prior = truth.signal.squaredNorm();
    CHECK(mse_post < mse_prior);
    CHECK((posterior_signal_mean(a, h) - truth.signal).squaredNorm() < mse_prior);
  }

  TEST_CASE("prediction from a single sample at a training input") {
    Hyperparams h = Hyperparams::defaults(1);
    h.sigma_f = 0.0;
    h.sigma_y = 1e-6;
    McmcChain chain;
    chain.shape = {3, 2, 1, 1};
    chain.X = default_grid(3, 1);
    NetworkParams s{Eigen::MatrixXd(3, 1), Eigen::MatrixXd(3, 2)};
    s.fhat << 0.5, -1.0, 2.0;
    s.w << 1.0, -0.5, 0.3, 2.0, -1.2, 0.7;
    chain.samples.push_back(s);
    chain.log_liks.push_back(0.0);
    const PredictiveDistribution d = predict_mcmc(chain, h, Eigen::VectorXd(chain.X.row(1).transpose()));
    const Eigen::VectorXd expected = s.weights_at(1) * s.fhat.row(1).transpose();
    CHECK((d.mean - expected).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(d.kind == PredictiveKind::GaussianMixture);

    McmcChain none;
    none.shape = chain.shape;
    none.X = chain.X;
    CHECK_THROWS_AS(predict_mcmc(none, h, Eigen::VectorXd(chain.X.row(0).transpose())), InputError);
  }

  TEST_CASE("mixture density integrates to one") {
    Hyperparams h = Hyperparams::defaults(1);
    h.sigma_f = 0.3;
    h.sigma_y = 0.2;
    const auto truth = generate({6, 1, 1, 1}, h, default_grid(6, 1), 3);
    McmcConfig c;
    c.n_burnin = 50;
    c.n_samples = 40;
    const McmcChain chain = run_chain(truth.dataset, h, 1, c);
    const PredictiveDistribution d = predict_mcmc(chain, h, Eigen::VectorXd(Eigen::VectorXd::Constant(1, 0.45)), 2);
    const double sd = std::sqrt(d.covariance(0, 0));
    const double lo = d.mean(0) - 12 * sd, hi = d.mean(0) + 12 * sd;
    const int n = 20000;
    double total = 0.0;
    for (int k = 0; k <= n; ++k) {
      const double y = lo + (hi - lo) * k / n;
      const double w = (k == 0 || k == n) ? 0.5 : 1.0;
      total += w * std::exp(log_density(d, Eigen::VectorXd::Constant(1, y)));
    }
    total *= (hi - lo) / n;
    CHECK(total == doctest::Approx(1.0).epsilon(0.01));
  }

  TEST_CASE("noise covariance under positive weights is positive") {
    Hyperparams h = Hyperparams::defaults(1);
    const auto truth = generate({5, 2, 1, 1}, h, default_grid(5, 1), 1);
    McmcConfig c;
    c.n_burnin = 20;
    c.n_samples = 10;
    c.positive_weights = true;
    const McmcChain chain = run_chain(truth.dataset, h, 1, c);
    const auto covs = noise_covariance_mcmc(chain, h, default_grid(3, 1));
    for (const auto& C : covs) {
      CHECK(C == C.transpose());
      CHECK((C.array() > 0).all());
    }
  }

  TEST_CASE("config validation") {
    McmcConfig c;
    c.thin = 0;
    CHECK_THROWS_AS(c.validate(), InputError);
    c.thin = 1;
    c.n_samples = -1;
    CHECK_THROWS_AS(c.validate(), InputError);
  }
}
