#include <doctest.h>

#include <cmath>

#include "gprn/errors.hpp"
#include "gprn/model.hpp"
#include "support.hpp"

using namespace gprn;

TEST_SUITE("model") {
  TEST_CASE("packing order") {
    NetworkParams params{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Constant(1, 1, 3.0)};
    const Eigen::VectorXd u = pack(params);
    REQUIRE(u.size() == 2);
    CHECK(u(0) == 2.0);
    CHECK(u(1) == 3.0);
  }

  TEST_CASE("pack and unpack are inverse") {
    Rng rng = make_rng(5);
    for (int t = 0; t < 20; ++t) {
      const NetworkShape s{1 + static_cast<Eigen::Index>(rng() % 5), 1 + static_cast<Eigen::Index>(rng() % 4),
                           1 + static_cast<Eigen::Index>(rng() % 3), 1};
      const Eigen::VectorXd u = standard_normal_vector(rng, s.packed_size());
      const NetworkParams p = unpack(u, s);
      CHECK(pack(p) == u);
      CHECK(p.weights_at(0)(s.p - 1, s.q - 1) == p.weight(0, s.p - 1, s.q - 1));
    }
    const NetworkShape s{3, 2, 2, 1};
    CHECK_THROWS_AS(unpack(Eigen::VectorXd::Zero(s.packed_size() + 1), s), InputError);
    CHECK_THROWS_AS(unpack(Eigen::VectorXd::Zero(s.packed_size() - 1), s), InputError);
  }

  TEST_CASE("log likelihood oracles") {
    Mask all = Mask::Constant(1, 1, true);
    CHECK(log_likelihood(Eigen::MatrixXd::Constant(1, 1, 7.0), Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1),
                         all, 1.0) == doctest::Approx(-0.5 * std::log(2 * M_PI)));

    Rng rng = make_rng(9);
    const Eigen::Index n = 4, p = 3, q = 2;
    const NetworkParams params = unpack(standard_normal_vector(rng, n * q * (p + 1)), {n, p, q, 1});
    Eigen::MatrixXd Y(n, p);
    for (Eigen::Index r = 0; r < n; ++r) Y.row(r) = (params.weights_at(r) * params.fhat.row(r).transpose()).transpose();
    Mask mask = Mask::Constant(n, p, true);
    mask(1, 2) = false;
    mask(3, 0) = false;
    const double s = 0.3;
    CHECK(log_likelihood(params, Y, mask, s) == doctest::Approx(-10.0 / 2 * std::log(2 * M_PI * s * s)));
    CHECK(log_likelihood(params, Y, Mask::Constant(n, p, false), s) == 0.0);

    // masked entries are never read
    Eigen::MatrixXd Yn = Y;
    Yn(1, 2) = std::nan("");
    CHECK(std::isfinite(log_likelihood(params, Yn, mask, s)));
  }

  TEST_CASE("log likelihood work is N p q") {
    Rng rng = make_rng(2);
    const Eigen::Index n = 5, p = 4, q = 3;
    const NetworkParams params = unpack(standard_normal_vector(rng, n * q * (p + 1)), {n, p, q, 1});
    std::size_t ops = 0;
    log_likelihood(params.fhat, params.w, Eigen::MatrixXd::Zero(n, p), Mask::Constant(n, p, true), 1.0, false, &ops);
    CHECK(ops == static_cast<std::size_t>(n * p * q));
  }

  TEST_CASE("positive weights likelihood uses exp(w)") {
    Rng rng = make_rng(4);
    const NetworkParams params = unpack(standard_normal_vector(rng, 2 * 1 * 3), {2, 2, 1, 1});
    const Eigen::MatrixXd Y = Eigen::MatrixXd::Ones(2, 2);
    const Mask m = Mask::Constant(2, 2, true);
    CHECK(log_likelihood(params.fhat, params.w, Y, m, 0.5, true) ==
          doctest::Approx(log_likelihood(exp_weight_transform(params), Y, m, 0.5)));
  }

  TEST_CASE("exp weight transform") {
    NetworkParams p{Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd::Zero(2, 2)};
    CHECK(exp_weight_transform(p).w == Eigen::MatrixXd::Ones(2, 2));
    p.w << -1, 0.5, 2, 3;
    const NetworkParams e = exp_weight_transform(p);
    CHECK(e.w(0, 0) < e.w(0, 1));
    CHECK(e.fhat == p.fhat);
    for (double w = -10; w <= 10; w += 0.5) CHECK(std::abs(std::log(std::exp(w)) - w) < 1e-12);
  }

  TEST_CASE("mixing kernel") {
    Hyperparams h = Hyperparams::defaults(1);
    h.sigma_f = 0;
    h.sigma_y = 0;
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.2), xp = Eigen::VectorXd::Constant(1, 0.9);
    const Eigen::VectorXd one = Eigen::VectorXd::Ones(1), two = Eigen::VectorXd::Constant(1, 2.0);
    CHECK(mixing_kernel(h, one, one, x, xp, false) == doctest::Approx(evaluate(h.theta_f, x, xp)));
    CHECK(mixing_kernel(h, two, two, x, x, true) == doctest::Approx(4.0));

    Hyperparams h2 = Hyperparams::defaults(2);
    h2.sigma_f = 0.3;
    h2.sigma_y = 0.2;
    h2.theta_f = KernelSpec::squared_exponential(1, 0.5);
    Eigen::VectorXd w(2);
    w << 1, 0;
    const double k = mixing_kernel(h2, w, w, x, xp, false);
    CHECK(k == doctest::Approx(evaluate(h2.theta_f, x, xp)));
    CHECK(mixing_kernel(h2, w, w, x, x, true) == doctest::Approx(1.0 + 0.09 + 0.04));
  }

  TEST_CASE("noise covariance") {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(3, 2);
    CHECK(noise_covariance(W, 0.7, 0.5).isApprox(0.25 * Eigen::MatrixXd::Identity(3, 3)));
    Eigen::MatrixXd W1 = Eigen::MatrixXd::Ones(2, 1);
    CHECK(noise_covariance(W1, 1, 0) == Eigen::MatrixXd::Ones(2, 2));
    Rng rng = make_rng(3);
    for (int t = 0; t < 20; ++t) {
      Eigen::MatrixXd Wr(3, 2);
      for (Eigen::Index i = 0; i < Wr.size(); ++i) Wr(i) = standard_normal(rng);
      const Eigen::MatrixXd C = noise_covariance(Wr, 0.8, 0.3);
      CHECK(C == C.transpose());
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
      CHECK(es.eigenvalues().minCoeff() >= 0.09 - 1e-12);
    }
  }

  TEST_CASE("decomposition") {
    Rng rng = make_rng(8);
    Eigen::MatrixXd W(2, 2);
    W << 1, 2, -1, 0.5;
    const Eigen::VectorXd f = Eigen::Vector2d(0.3, -0.7);
    const Decomposition d = decompose(W, f, 0, 0, rng);
    CHECK(d.y == W * f);
    CHECK(d.signal == W * f);
    CHECK(d.noise.isZero());

    std::vector<Eigen::VectorXd> noise;
    for (int s = 0; s < 100000; ++s) noise.push_back(decompose(W, f, 0.5, 0.3, rng).noise);
    CHECK(testing::rel_frobenius(testing::sample_covariance(noise), noise_covariance(W, 0.5, 0.3)) < 0.05);
  }

  TEST_CASE("ARD scaling") {
    Inputs X = Eigen::VectorXd::LinSpaced(4, 0, 1);
    const Eigen::MatrixXd K = gram(KernelSpec::squared_exponential(1, 0.5), X);
    CHECK(apply_ard(K, 1.0) == K);
    CHECK(apply_ard(K, 4.0) == 4.0 * K);
    CHECK(safe_cholesky(apply_ard(K, 4.0)).log_det() ==
          doctest::Approx(safe_cholesky(K).log_det() + 4 * std::log(4.0)));
    CHECK_THROWS_AS(apply_ard(K, 0.0), InputError);
  }

  TEST_CASE("node covariance and network prior") {
    Hyperparams h = Hyperparams::defaults(2);
    h.ard << 1.0, 3.0;
    Inputs X = Eigen::VectorXd::LinSpaced(3, 0, 1);
    const Eigen::MatrixXd C1 = node_covariance(h, X, 1);
    const Eigen::MatrixXd K = gram(h.theta_f, X);
    CHECK(C1.isApprox(3.0 * K + h.sigma_f * h.sigma_f * Eigen::MatrixXd::Identity(3, 3)));
    const BlockPrior prior = build_network_prior(h, X, 2, 2);
    CHECK(prior.node_chols.size() == 2);
    CHECK(build_network_prior(Hyperparams::defaults(2), X, 2, 2).node_chols.size() == 1);
  }

  TEST_CASE("hyperparameter validation") {
    Hyperparams h = Hyperparams::defaults(2);
    CHECK_NOTHROW(h.validate(2));
    CHECK_THROWS_AS(h.validate(3), InputError);
    h.sigma_y = 0;
    CHECK_THROWS_AS(h.validate(2), InputError);
  }
}
