#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gprn/cli.hpp"
#include "gprn/data_io.hpp"
#include "gprn/errors.hpp"
#include "gprn/mcmc.hpp"
#include "gprn/metrics.hpp"
#include "gprn/synthetic.hpp"
#include "gprn/vb.hpp"
#include "support.hpp"

using namespace gprn;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

Outcome verdict(bool ok, const std::string& detail) { return {ok ? Status::Pass : Status::Fail, detail}; }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Hyperparams kernels(Eigen::Index q, double lf, double lw) {
  Hyperparams h = Hyperparams::defaults(q);
  h.theta_f = KernelSpec::squared_exponential(1, lf);
  h.theta_w = KernelSpec::squared_exponential(1, lw);
  return h;
}

// ---------------------------------------------------------------------------

Outcome ess_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Hyperparams h = kernels(1, 0.4, 0.6);
  h.sigma_f = 0.3;
  const Inputs X = default_grid(3, 1);
  const BlockPrior prior = build_network_prior(h, X, 1, 1);
  const Eigen::Index D = prior.shape.total();
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(D, D);
  for (Eigen::Index b = 0; b < 2; ++b) {
    const Eigen::MatrixXd blk = b == 0 ? prior.node_chol(0).reconstruct() : prior.weight_chol.reconstruct();
    dense.block(b * 3, b * 3, 3, 3) = blk;
  }

  Rng rng = make_rng(2024);
  const LogLikelihood flat = [](const Eigen::VectorXd&) { return 0.0; };
  Eigen::VectorXd u = prior_sample(prior, rng);
  const int steps = 20000;
  std::vector<std::vector<double>> trace(static_cast<std::size_t>(D));
  for (int s = 0; s < steps; ++s) {
    u = ess_step(u, 0.0, prior, flat, rng).u;
    for (Eigen::Index k = 0; k < D; ++k) trace[static_cast<std::size_t>(k)].push_back(u(k));
  }

  bool ok = true;
  double worst_var = 0.0, min_p = 1.0;
  for (Eigen::Index k = 0; k < D; ++k) {
    const auto& xs = trace[static_cast<std::size_t>(k)];
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / steps;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= steps - 1;
    const double target = dense(k, k);
    worst_var = std::max(worst_var, std::abs(var / target - 1.0));
    const double sd = std::sqrt(target);
    const double p = testing::ks_pvalue(testing::ks_statistic(xs, [sd](double x) { return testing::normal_cdf(x, sd); }),
                                        xs.size());
    min_p = std::min(min_p, p);
  }
  ok = worst_var < 0.10 && min_p > 0.001;
  const double secs = seconds_since(t0);
  ok = ok && secs < 30.0;
  return verdict(ok, "max variance error " + fmt(worst_var) + ", min KS p " + fmt(min_p) + ", " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------

Dataset random_masked_instance(Rng& rng, Eigen::Index n, Eigen::Index p, Eigen::Index q, std::uint64_t seed) {
  Hyperparams h = kernels(q, 0.2 + 0.3 * uniform01(rng), 0.3 + 0.4 * uniform01(rng));
  h.sigma_f = 0.05 + 0.2 * uniform01(rng);
  h.sigma_y = 0.05 + 0.2 * uniform01(rng);
  auto t = generate({n, p, q, 1}, h, default_grid(n, 1), seed);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < p; ++c)
      if (uniform01(rng) < 0.25) t.dataset.mask(r, c) = false;
  t.dataset.mask(0, 0) = true;
  return t.dataset;
}

Outcome vb_monotonicity() {
  Rng rng = make_rng(7);
  double worst = 0.0;
  std::size_t steps = 0;
  for (std::uint64_t inst = 0; inst < 100; ++inst) {
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng() % 8);
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(rng() % 3);
    const Eigen::Index q = 1 + static_cast<Eigen::Index>(rng() % 2);
    const Dataset d = random_masked_instance(rng, n, p, q, inst);
    Hyperparams init = kernels(q, 0.3, 0.3);
    VbContext ctx = VbContext::make(d, init, true);
    VariationalPosterior post = initialize_posterior(ctx, rng, 0.1);
    VbConfig cfg;
    double prev = elbo(ctx, post);
    auto record = [&](double v) {
      worst = std::max(worst, prev - v);
      prev = v;
      ++steps;
    };
    for (int it = 0; it < 20; ++it) {
      estep(ctx, post, [&](const std::string&, double v) { record(v); });
      mstep(ctx, post, cfg);
      record(elbo(ctx, post));
    }
  }
  return verdict(worst <= 1e-8, "largest decrease " + fmt(worst) + " over " + std::to_string(steps) + " recorded steps");
}

// ---------------------------------------------------------------------------

Outcome mstep_gradient() {
  Rng rng = make_rng(11);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    // stratified inputs keep the gram far enough from singular for the
    // finite-difference reference to be accurate
    Inputs X = testing::random_inputs(rng, 5, 1 + inst % 2);
    for (Eigen::Index k = 0; k < 5; ++k) X(k, 0) = (static_cast<double>(k) + 0.25 + 0.5 * X(k, 0)) / 5.0;
    const double amp = 0.5 + uniform01(rng), len = 0.1 + 0.3 * uniform01(rng);
    const KernelSpec spec = inst % 3 == 0   ? KernelSpec::squared_exponential(amp, len)
                            : inst % 3 == 1 ? KernelSpec::matern(2.5, amp, len)
                                            : KernelSpec::ornstein_uhlenbeck(amp, len);
    // posterior moments of f_j from a VB-like state
    const Eigen::VectorXd mu = standard_normal_vector(rng, 5);
    const Eigen::MatrixXd Sigma = 0.2 * testing::random_spd(rng, 5);
    const Eigen::MatrixXd S = mu * mu.transpose() + Sigma;
    const double inv_a = 0.2 + 2.0 * uniform01(rng);
    auto objective = [&](double log_l) {
      const Eigen::MatrixXd K = gram(spec.with_length_scale(std::exp(log_l)), X);
      Eigen::LLT<Eigen::MatrixXd> llt(K);
      CholFactor c;
      c.L = llt.matrixL();
      return expected_log_prior(c, S, inv_a, 1.0);
    };
    const double l0 = std::log(len), h = 1e-5;
    const double fd = (objective(l0 + h) - objective(l0 - h)) / (2 * h);
    const CholFactor K = safe_cholesky(gram(spec, X));
    const double an = expected_log_prior_grad(K, gram_dlog_length(spec, X), S, inv_a, 1.0);
    worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(fd), 1e-300));
  }
  return verdict(worst < 1e-4, "max relative error " + fmt(worst));
}

// ---------------------------------------------------------------------------

Outcome block_cholesky() {
  Rng rng = make_rng(5);
  double worst_logdet = 0.0, worst_cov = 0.0;
  int shapes = 0;
  for (Eigen::Index n = 1; n <= 30; ++n)
    for (Eigen::Index q = 1; n * q * 2 <= 30; ++q)
      for (Eigen::Index p = 1; n * q * (p + 1) <= 30; ++p) {
        ++shapes;
        const Inputs X = testing::random_inputs(rng, n, 1);
        std::vector<Eigen::MatrixXd> node_grams;
        for (Eigen::Index j = 0; j < q; ++j) {
          Eigen::MatrixXd K = gram(KernelSpec::squared_exponential(0.5 + uniform01(rng), 0.3), X);
          K.diagonal().array() += 0.05;
          node_grams.push_back(K);
        }
        Eigen::MatrixXd Kw = gram(KernelSpec::matern(1.5, 1.0, 0.4), X);
        Kw.diagonal().array() += 0.01;
        const BlockPrior prior = build_block_prior(node_grams, Kw, p, q);

        const Eigen::Index D = n * q * (p + 1);
        Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(D, D);
        for (Eigen::Index j = 0; j < q; ++j) dense.block(j * n, j * n, n, n) = node_grams[static_cast<std::size_t>(j)];
        for (Eigen::Index b = q; b < q * (p + 1); ++b) dense.block(b * n, b * n, n, n) = Kw;
        Eigen::LLT<Eigen::MatrixXd> llt(dense);
        const double dense_logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        worst_logdet = std::max(worst_logdet, std::abs(prior.log_det() - dense_logdet) / std::max(1.0, std::abs(dense_logdet)));

        // u = B z; the covariance of every sample is B B^T
        Eigen::MatrixXd B(D, D);
        for (Eigen::Index k = 0; k < D; ++k) B.col(k) = prior_sample_from_normals(prior, Eigen::VectorXd::Unit(D, k));
        worst_cov = std::max(worst_cov, (B * B.transpose() - dense).cwiseAbs().maxCoeff() / dense.cwiseAbs().maxCoeff());
        Rng a = make_rng(9), b = make_rng(9);
        const Eigen::VectorXd z = standard_normal_vector(b, D);
        worst_cov = std::max(worst_cov, (prior_sample(prior, a) - B * z).cwiseAbs().maxCoeff());
      }
  return verdict(worst_logdet < 1e-8 && worst_cov < 1e-8,
                 std::to_string(shapes) + " shapes, log-det error " + fmt(worst_logdet) + ", covariance error " + fmt(worst_cov));
}

// ---------------------------------------------------------------------------

Outcome generative_consistency() {
  Rng rng = make_rng(17);
  const Eigen::Index p = 3, q = 2;
  Eigen::MatrixXd W(p, q);
  for (Eigen::Index i = 0; i < W.size(); ++i) W(i) = standard_normal(rng);
  const Eigen::VectorXd f = standard_normal_vector(rng, q);
  const double sf = 0.4, sy = 0.3;
  const int draws = 100000;
  std::vector<Eigen::VectorXd> noise;
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(p, p);
  for (int s = 0; s < draws; ++s) {
    const Decomposition d = decompose(W, f, sf, sy, rng);
    noise.push_back(d.noise);
    second += d.y * d.y.transpose();
  }
  second /= draws;
  const Eigen::MatrixXd sigma = noise_covariance(W, sf, sy);
  const double e_noise = testing::rel_frobenius(testing::sample_covariance(noise), sigma);

  // Second moment of y marginally over the generative model at one input:
  //   E[y y^T] = diag_i(sum_j a_j k_f(x,x) k_w(x,x) + sf^2 sum_j k_w(x,x)) + sy^2 I.
  Hyperparams h = kernels(q, 0.3, 0.5);
  h.theta_f = KernelSpec::squared_exponential(1.3, 0.3);
  h.theta_w = KernelSpec::squared_exponential(0.8, 0.5);
  h.ard << 1.0, 0.5;
  h.sigma_f = sf;
  h.sigma_y = sy;
  Eigen::MatrixXd emp = Eigen::MatrixXd::Zero(p, p);
  for (int s = 0; s < draws; ++s) {
    Eigen::MatrixXd Ws(p, q);
    for (Eigen::Index i = 0; i < Ws.size(); ++i) Ws(i) = std::sqrt(h.theta_w.amplitude()) * standard_normal(rng);
    Eigen::VectorXd fs(q);
    for (Eigen::Index j = 0; j < q; ++j) fs(j) = std::sqrt(h.ard(j) * h.theta_f.amplitude()) * standard_normal(rng);
    const Eigen::VectorXd y = decompose(Ws, fs, sf, sy, rng).y;
    emp += y * y.transpose();
  }
  emp /= draws;
  Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    double v = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) v += h.theta_w.amplitude() * (h.ard(j) * h.theta_f.amplitude() + sf * sf);
    analytic(i, i) = v + sy * sy;
  }
  const double e_second = testing::rel_frobenius(emp, analytic);

  // conditional second moment for a fixed network: W f f^T W^T + Sigma
  const Eigen::MatrixXd cond = W * f * f.transpose() * W.transpose() + sigma;
  const double e_cond = testing::rel_frobenius(second, cond);
  return verdict(e_noise < 0.05 && e_second < 0.05 && e_cond < 0.05,
                 "noise covariance " + fmt(e_noise) + ", marginal second moment " + fmt(e_second) +
                     ", conditional second moment " + fmt(e_cond));
}

// ---------------------------------------------------------------------------

Outcome recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::Index N = 15, p = 3, q = 2;
  Hyperparams truth_h = kernels(q, 0.3, 0.5);
  truth_h.sigma_f = 0.05;
  truth_h.sigma_y = 0.1;
  const Mask all = Mask::Constant(N, p, true);
  double vb_sum = 0.0, mc_sum = 0.0, gp_sum = 0.0;
  std::string per_seed;
  const int seeds = 5;
  for (int seed = 0; seed < seeds; ++seed) {
    const SyntheticTruth tr = generate({N, p, q, 1}, truth_h, default_grid(N, 1), static_cast<std::uint64_t>(seed));
    Dataset d = tr.dataset;
    for (Eigen::Index n = N / 3; n < 2 * N / 3; ++n) d.mask(n, 0) = false;

    Hyperparams init = kernels(q, 0.3, 0.3);
    init.priors.sigma_y2 = {1, 0.01};
    init.priors.sigma_f2 = {1, 0.01};
    VbConfig vc;
    vc.seed = static_cast<std::uint64_t>(seed);
    const VbFit fit = fit_vb(d, q, vc, init);
    Eigen::MatrixXd vb_mean(N, p);
    for (Eigen::Index n = 0; n < N; ++n) vb_mean.row(n) = predict_vb(fit, d.X.row(n).transpose()).mean.transpose();

    McmcConfig mc;
    mc.seed = static_cast<std::uint64_t>(seed);
    const McmcChain chain = run_chain(d, fit.hyp, q, mc, pack(NetworkParams{fit.posterior.fhat_mean, fit.posterior.w_mean}));
    const Eigen::MatrixXd mc_mean = posterior_signal_mean(chain, fit.hyp);

    const IndependentGpFit gp = fit_independent_gps(d.X, d.Y, d.mask);
    const Eigen::MatrixXd gp_mean = predict_independent_gps(gp, d.X, d.Y, d.mask, d.X).first;

    const double s_vb = smse(vb_mean, tr.signal, all), s_mc = smse(mc_mean, tr.signal, all),
                 s_gp = smse(gp_mean, tr.signal, all);
    vb_sum += s_vb;
    mc_sum += s_mc;
    gp_sum += s_gp;
    per_seed += " [" + fmt(s_vb, 3) + " " + fmt(s_mc, 3) + " " + fmt(s_gp, 3) + "]";
  }
  const double vb = vb_sum / seeds, mc = mc_sum / seeds, gp = gp_sum / seeds;
  const double secs = seconds_since(t0);
  return verdict(vb < 0.5 && mc < 0.5 && vb < gp && mc < gp && secs < 300.0,
                 "mean SMSE vb " + fmt(vb) + ", mcmc " + fmt(mc) + ", independent GP " + fmt(gp) + "; per seed" +
                     per_seed + "; " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------

struct ScratchDir {
  fs::path path;
  ScratchDir() {
    path = fs::temp_directory_path() / ("gprn_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

Outcome model_selection() {
  const auto t0 = std::chrono::steady_clock::now();
  ScratchDir tmp;
  Hyperparams truth_h = kernels(1, 0.3, 0.5);
  truth_h.sigma_f = 0.05;
  truth_h.sigma_y = 0.1;
  int selected = 0, shrunk = 0;
  std::string detail;
  for (int run = 0; run < 10; ++run) {
    const SyntheticTruth tr = generate({20, 3, 1, 1}, truth_h, default_grid(20, 1), 100 + static_cast<std::uint64_t>(run));
    const fs::path dir = tmp.path / ("run" + std::to_string(run));
    fs::create_directories(dir);
    save_csv(dir / "data.csv", tr.dataset);
    write_text_file(dir / "select.ini",
                    "[data]\npath = data.csv\nn_input_cols = 1\nnormalize = false\n"
                    "[model]\nnode_kernel = \"se(1, 0.3)\"\nweight_kernel = \"se(1, 0.3)\"\n"
                    "prior_sigma_f2 = \"1, 0.01\"\nprior_sigma_y2 = \"1, 0.01\"\nprior_ard = \"1, 0.01\"\n"
                    "[inference]\nseed = " + std::to_string(run) + "\n"
                    "[vb]\nn_restarts = 5\n[select_q]\ncandidates = \"1,2,3\"\n[output]\ndir = out\n");
    CliOptions o;
    o.command = "select-q";
    o.config = dir / "select.ini";
    std::ostringstream out, err;
    if (run_cli(o, out, err) != 0) return {Status::Fail, "select-q failed: " + err.str()};
    const auto meta = nlohmann::json::parse(read_text_file(dir / "out" / "meta.json"));
    const int best = meta["best_q"].get<int>();
    selected += best == 1;
    // ARD variances of the q = 2 fit
    const auto ard = meta["ard"][1].get<std::vector<double>>();
    const double ratio = *std::min_element(ard.begin(), ard.end()) / *std::max_element(ard.begin(), ard.end());
    shrunk += ratio < 0.1;
    detail += " " + std::to_string(best) + "/" + fmt(ratio, 2);
  }
  const double secs = seconds_since(t0);
  return verdict(selected >= 9 && shrunk >= 9,
                 "q=1 chosen " + std::to_string(selected) + "/10, superfluous ARD below 10% in " + std::to_string(shrunk) +
                     "/10 (best q/ARD ratio:" + detail + "); " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------

Outcome metric_definitions() {
  double worst_smse = 0.0, worst_msll = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, 8);
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng() % 50), p = 1 + static_cast<Eigen::Index>(rng() % 4);
    Eigen::MatrixXd Y(n, p);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y(i) = 100.0 * (seed % 3) + std::exp(standard_normal(rng));
    Mask m = Mask::Constant(n, p, true);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < p; ++c)
        if (i >= 2 && uniform01(rng) < 0.2) m(i, c) = false;
    const TargetStats train = column_stats(Y, m);
    Eigen::MatrixXd mu(n, p), var(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu.row(i) = train.mean.transpose();
      var.row(i) = train.var.transpose();
    }
    worst_smse = std::max(worst_smse, std::abs(smse(mu, Y, m) - 1.0));
    worst_smse = std::max(worst_smse, std::abs(smse(mu, Y, m, SmseNormalizer::TrainVariance, &train) - 1.0));
    worst_msll = std::max(worst_msll, std::abs(msll(mu, var, Y, m, train)));
  }
  return verdict(worst_smse <= 1e-12 && worst_msll <= 1e-12,
                 "max |SMSE - 1| " + fmt(worst_smse) + ", max |MSLL| " + fmt(worst_msll));
}

// ---------------------------------------------------------------------------

Outcome likelihood_scaling() {
  const Eigen::Index N = 200, q = 3;
  auto time_for = [&](Eigen::Index p) {
    Rng rng = make_rng(static_cast<std::uint64_t>(p));
    Eigen::MatrixXd fhat(N, q), w(N, p * q), Y(N, p);
    for (Eigen::Index i = 0; i < fhat.size(); ++i) fhat(i) = standard_normal(rng);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = standard_normal(rng);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y(i) = standard_normal(rng);
    const Mask m = Mask::Constant(N, p, true);
    double best = 1e300, sink = 0.0;
    for (int rep = 0; rep < 30; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int k = 0; k < 10; ++k) sink += log_likelihood(fhat, w, Y, m, 0.3);
      best = std::min(best, seconds_since(t0));
    }
    if (!std::isfinite(sink)) best = 1e300;
    return best;
  };
  time_for(100);
  const double t100 = time_for(100), t400 = time_for(400);
  const double ratio = t400 / t100;
  return verdict(ratio >= 2.0 && ratio <= 8.0, "p=400/p=100 time ratio " + fmt(ratio) + " (" + fmt(t100 * 1e3) + " ms vs " +
                                                   fmt(t400 * 1e3) + " ms per 10 calls)");
}

// ---------------------------------------------------------------------------

std::optional<fs::path> env_path(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return fs::path(v);
}

// Training file: x,y,cd,ni,zn at the prediction locations. Test file: the
// same columns at the validation locations, where cd is held out and the
// other metals are observed.
Outcome jura() {
  const auto train_path = env_path("GPRN_JURA_TRAIN"), test_path = env_path("GPRN_JURA_TEST");
  if (!train_path || !test_path) return {Status::Skip, "set GPRN_JURA_TRAIN and GPRN_JURA_TEST to run"};
  const Dataset train_raw = load_csv(*train_path, 2), test = load_csv(*test_path, 2);
  if (train_raw.p() != 3 || test.p() != 3) return {Status::Fail, "expected columns x,y,cd,ni,zn"};

  Dataset all = train_raw;
  const Eigen::Index n0 = train_raw.n(), n1 = test.n();
  all.X.conservativeResize(n0 + n1, 2);
  all.Y.conservativeResize(n0 + n1, 3);
  all.mask.conservativeResize(n0 + n1, 3);
  all.X.bottomRows(n1) = test.X;
  all.Y.bottomRows(n1) = test.Y;
  all.mask.bottomRows(n1) = test.mask;
  all.mask.block(n0, 0, n1, 1).setConstant(false);
  all.Y.block(n0, 0, n1, 1).setConstant(kMissing);

  const Transforms tf = fit_transforms(all, true, true);
  const Dataset z = apply_transforms(all, tf);
  Hyperparams init = kernels(2, 0.1, 1.0);
  init.theta_f = KernelSpec::squared_exponential(1, 0.5);
  VbConfig vc;
  vc.n_restarts = 10;
  const VbFit fit = fit_vb(z, 2, vc, init);

  Eigen::MatrixXd gprn_cd(n1, 1);
  for (Eigen::Index n = 0; n < n1; ++n)
    gprn_cd(n, 0) = invert_transforms(predict_vb(fit, test.X.row(n).transpose()), tf).mean(0);

  // the baseline sees cadmium at the training locations only
  const Dataset cd_raw{train_raw.X, train_raw.Y.leftCols(1), train_raw.mask.leftCols(1), train_raw.input_names, {"cd"}};
  const Transforms tcd = fit_transforms(cd_raw, true, true);
  const Dataset cd = apply_transforms(cd_raw, tcd);
  const IndependentGpFit gp = fit_independent_gps(cd.X, cd.Y, cd.mask);
  const auto [gm, gv] = predict_independent_gps(gp, cd.X, cd.Y, cd.mask, test.X);
  Eigen::MatrixXd gp_cd(n1, 1);
  for (Eigen::Index n = 0; n < n1; ++n)
    gp_cd(n, 0) = invert_transforms(gaussian_moments(gm.row(n).transpose(), gv.row(n).asDiagonal()), tcd).mean(0);

  const Mask m = test.mask.leftCols(1);
  const Eigen::MatrixXd truth = test.Y.leftCols(1);
  const double mae_gprn = mae(gprn_cd, truth, m), mae_gp = mae(gp_cd, truth, m);
  return verdict(mae_gprn < mae_gp, "cadmium MAE gprn " + fmt(mae_gprn) + ", independent GP " + fmt(mae_gp) +
                                        " (reference 0.4040 +/- 0.05: " +
                                        (std::abs(mae_gprn - 0.4040) <= 0.05 ? "within" : "outside") + ")");
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "ESS preserves the prior", ess_correctness},
      {2, "VB objective is monotone", vb_monotonicity},
      {3, "M-step gradient matches finite differences", mstep_gradient},
      {4, "block Cholesky matches dense covariance", block_cholesky},
      {5, "generative noise and second moments", generative_consistency},
      {6, "recovery beats independent GPs", recovery},
      {7, "model selection and ARD shrinkage", model_selection},
      {8, "trivial predictor metrics", metric_definitions},
      {9, "likelihood cost is linear in outputs", likelihood_scaling},
      {10, "Jura cadmium", jura},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GPRN acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  bool failed = false, skipped = false;
  for (const auto& c : criteria()) {
    if (only && c.id != only) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Skip ? "SKIP" : "FAIL";
    std::cout << tag << " " << c.id << " " << c.name << ": " << o.detail << std::endl;
    failed = failed || o.status == Status::Fail;
    skipped = skipped || o.status == Status::Skip;
  }
  if (failed) return 1;
  return only && skipped ? 77 : 0;
}
