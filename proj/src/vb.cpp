#include "gprn/vb.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

#include "gprn/errors.hpp"

namespace gprn {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void require_finite(double v, const std::string& factor) {
  if (!std::isfinite(v)) throw NumericalError("non-finite moment in factor " + factor);
}

void require_finite(const Eigen::MatrixXd& m, const std::string& factor) {
  if (!m.allFinite()) throw NumericalError("non-finite moment in factor " + factor);
}

/// E_q[log IG(x; prior)] for q = IG(post).
double ig_expected_log_prior(const InverseGamma& prior, const InverseGamma& post) {
  return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) -
         (prior.shape + 1.0) * ig_mean_log(post) - prior.rate * ig_mean_inverse(post);
}

double ig_entropy(const InverseGamma& ig) {
  return ig.shape + std::log(ig.rate) + std::lgamma(ig.shape) -
         (1.0 + ig.shape) * boost::math::digamma(ig.shape);
}

double gaussian_entropy(const GaussianFactor& g) {
  return 0.5 * (g.log_det + static_cast<double>(g.mean.size() ? g.mean.size() : g.cov.rows()) *
                                (1.0 + kLog2Pi));
}

GaussianFactor site_covariance(const Eigen::MatrixXd& L, const Eigen::VectorXd& d) {
  const Eigen::Index n = L.rows();
  Eigen::MatrixXd M = L.transpose() * d.asDiagonal() * L;
  M.diagonal().array() += 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) throw NumericalError("site precision is not positive definite");
  const Eigen::MatrixXd T = llt.matrixL().solve(L.transpose());
  GaussianFactor g;
  g.cov = T.transpose() * T;
  g.log_det = 2.0 * L.diagonal().array().log().sum() -
              2.0 * llt.matrixLLT().diagonal().array().log().sum();
  g.mean = Eigen::VectorXd::Zero(n);
  return g;
}

double input_span(const Inputs& X) {
  double span = 0.0;
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    span = std::max(span, X.col(c).maxCoeff() - X.col(c).minCoeff());
  return span > 0.0 ? span : 1.0;
}

}  // namespace

double ig_mean_or_fallback(const InverseGamma& ig) {
  return ig.shape > 1.0 ? ig.rate / (ig.shape - 1.0) : ig.rate / ig.shape;
}

double ig_mean_log(const InverseGamma& ig) {
  return std::log(ig.rate) - boost::math::digamma(ig.shape);
}

double VariationalPosterior::inv_a(Eigen::Index j) const {
  return ard ? ig_mean_inverse(q_a[static_cast<std::size_t>(j)]) : 1.0 / q_a[static_cast<std::size_t>(j)].rate;
}

double VariationalPosterior::log_a(Eigen::Index j) const {
  return ard ? ig_mean_log(q_a[static_cast<std::size_t>(j)]) : std::log(q_a[static_cast<std::size_t>(j)].rate);
}

VariationalPosterior::Moments VariationalPosterior::t_site(Eigen::Index n, Eigen::Index i,
                                                           Eigen::Index j) const {
  const double w = w_mean(n, i * shape.q + j);
  const double w2 = w * w + w_var(n, i, j);
  const double f = fhat_mean(n, j);
  const double f2 = f * f + fhat_var(n, j);
  return {w * f, w2 * f2};
}

std::pair<double, double> VariationalPosterior::s_site(Eigen::Index i, Eigen::Index n) const {
  double mean = 0.0, var = 0.0;
  for (Eigen::Index j = 0; j < shape.q; ++j) {
    const Moments t = t_site(n, i, j);
    mean += t.mean;
    var += t.second - t.mean * t.mean;
  }
  return {mean, var};
}

Eigen::MatrixXd VariationalPosterior::signal_mean() const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(shape.n, shape.p);
  for (Eigen::Index i = 0; i < shape.p; ++i)
    for (Eigen::Index j = 0; j < shape.q; ++j)
      s.col(i).array() += w_mean.col(i * shape.q + j).array() * q_f[static_cast<std::size_t>(j)].mean.array();
  return s;
}

VbContext VbContext::make(const Dataset& data, const Hyperparams& hyp, bool ard) {
  data.validate();
  hyp.validate(hyp.ard.size());
  if (ard && data.n() < 3) throw InputError("ARD needs at least 3 training inputs");
  VbContext ctx;
  ctx.data = data;
  ctx.hyp = hyp;
  ctx.ard = ard;

  std::map<std::vector<bool>, Eigen::Index> seen;
  for (Eigen::Index i = 0; i < data.p(); ++i) {
    std::vector<bool> col(static_cast<std::size_t>(data.n()));
    for (Eigen::Index n = 0; n < data.n(); ++n) col[static_cast<std::size_t>(n)] = data.mask(n, i);
    auto [it, inserted] = seen.emplace(col, static_cast<Eigen::Index>(ctx.groups.size()));
    if (inserted) ctx.groups.emplace_back();
    ctx.groups[static_cast<std::size_t>(it->second)].push_back(i);
    ctx.output_group.push_back(it->second);
  }
  ctx.active_rows.resize(static_cast<std::size_t>(data.n()));
  for (Eigen::Index n = 0; n < data.n(); ++n) {
    ctx.active_rows[static_cast<std::size_t>(n)] = data.mask.row(n).any();
    ctx.n_active += ctx.active_rows[static_cast<std::size_t>(n)] ? 1 : 0;
  }
  ctx.n_obs = data.observed_count();
  ctx.refactor();
  return ctx;
}

void VbContext::refactor() {
  kf = safe_cholesky(gram(hyp.theta_f, data.X), "node covariance K_f");
  kw = safe_cholesky(gram(hyp.theta_w, data.X), "weight covariance K_w");
}

VariationalPosterior initialize_posterior(const VbContext& ctx, Rng& rng, double init_std) {
  const Eigen::Index n = ctx.data.n(), p = ctx.data.p(), q = ctx.q();
  const auto& pr = ctx.hyp.priors;
  VariationalPosterior post;
  post.shape = {n, p, q, ctx.data.d()};
  post.ard = ctx.ard;
  post.output_group = ctx.output_group;

  const Eigen::MatrixXd Kf = ctx.kf.reconstruct();
  for (Eigen::Index j = 0; j < q; ++j) {
    GaussianFactor g;
    g.mean = init_std * standard_normal_vector(rng, n);
    const double a = ctx.hyp.ard(j);
    g.cov = a * Kf;
    g.log_det = ctx.kf.log_det() + static_cast<double>(n) * std::log(a);
    post.q_f.push_back(std::move(g));
  }
  post.w_mean.resize(n, p * q);
  for (Eigen::Index c = 0; c < p * q; ++c) post.w_mean.col(c) = init_std * standard_normal_vector(rng, n);
  const Eigen::MatrixXd Kw = ctx.kw.reconstruct();
  for (std::size_t g = 0; g < ctx.groups.size(); ++g)
    for (Eigen::Index j = 0; j < q; ++j)
      post.q_w_cov.push_back(GaussianFactor{Eigen::VectorXd::Zero(n), Kw, ctx.kw.log_det()});

  const double sf2 = std::max(ctx.hyp.sigma_f * ctx.hyp.sigma_f, 1e-6);
  post.fhat_mean.resize(n, q);
  for (Eigen::Index j = 0; j < q; ++j) post.fhat_mean.col(j) = post.q_f[static_cast<std::size_t>(j)].mean;
  post.fhat_var = Eigen::MatrixXd::Constant(n, q, sf2);

  const double sy_shape = pr.sigma_y2.shape + 0.5 * static_cast<double>(ctx.n_obs);
  post.q_sigma_y2 = {sy_shape, sy_shape * ctx.hyp.sigma_y * ctx.hyp.sigma_y};
  const double sf_shape = pr.sigma_f2.shape + 0.5 * static_cast<double>(ctx.n_active);
  for (Eigen::Index j = 0; j < q; ++j) {
    post.q_sigma_f2.push_back({sf_shape, sf_shape * sf2});
    if (ctx.ard) {
      const double a_shape = pr.ard.shape + 0.5 * static_cast<double>(n);
      post.q_a.push_back({a_shape, a_shape * ctx.hyp.ard(j)});
    } else {
      // fixed variance: the rate slot carries a_j itself
      post.q_a.push_back({1.0, ctx.hyp.ard(j)});
    }
  }
  return post;
}

double expected_quadratic(const CholFactor& K, const Eigen::VectorXd& mean,
                          const Eigen::MatrixXd& cov) {
  const Eigen::VectorXd v = K.solve_lower(mean);
  const Eigen::MatrixXd B = K.solve_lower(cov);
  const Eigen::MatrixXd C = K.solve_lower(B.transpose());
  return v.squaredNorm() + C.trace();
}

double elbo(const VbContext& ctx, const VariationalPosterior& post) {
  const auto& data = ctx.data;
  const auto& pr = ctx.hyp.priors;
  const Eigen::Index n_rows = data.n(), p = data.p(), q = ctx.q();
  const double N = static_cast<double>(n_rows);
  double total = 0.0;

  // observations
  const double tau_y = ig_mean_inverse(post.q_sigma_y2);
  const double log_sy = ig_mean_log(post.q_sigma_y2);
  for (Eigen::Index n = 0; n < n_rows; ++n)
    for (Eigen::Index i = 0; i < p; ++i) {
      if (!data.mask(n, i)) continue;
      const auto [sm, sv] = post.s_site(i, n);
      const double r = data.Y(n, i) - sm;
      total += -0.5 * kLog2Pi - 0.5 * log_sy - 0.5 * tau_y * (r * r + sv);
    }

  // fhat sites given f
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto& qs = post.q_sigma_f2[static_cast<std::size_t>(j)];
    const double tau_f = ig_mean_inverse(qs), log_sf = ig_mean_log(qs);
    const auto& qf = post.q_f[static_cast<std::size_t>(j)];
    for (Eigen::Index n = 0; n < n_rows; ++n) {
      if (!ctx.active_rows[static_cast<std::size_t>(n)]) continue;
      const double dm = post.fhat_mean(n, j) - qf.mean(n);
      const double e = dm * dm + post.fhat_var(n, j) + qf.cov(n, n);
      total += -0.5 * kLog2Pi - 0.5 * log_sf - 0.5 * tau_f * e +
               0.5 * (std::log(post.fhat_var(n, j)) + 1.0 + kLog2Pi);
    }
  }

  // node priors and entropies
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto& qf = post.q_f[static_cast<std::size_t>(j)];
    total += -0.5 * N * kLog2Pi - 0.5 * N * post.log_a(j) - 0.5 * ctx.kf.log_det() -
             0.5 * post.inv_a(j) * expected_quadratic(ctx.kf, qf.mean, qf.cov);
    total += gaussian_entropy(qf);
  }

  // weight priors and entropies
  const Eigen::MatrixXd V = ctx.kw.solve_lower(post.w_mean);
  for (std::size_t g = 0; g < ctx.groups.size(); ++g) {
    const auto count = static_cast<double>(ctx.groups[g].size());
    for (Eigen::Index j = 0; j < q; ++j) {
      const auto& c = post.q_w_cov[g * static_cast<std::size_t>(q) + static_cast<std::size_t>(j)];
      const Eigen::MatrixXd B = ctx.kw.solve_lower(c.cov);
      const double tr = ctx.kw.solve_lower(B.transpose()).trace();
      total += count * (-0.5 * N * kLog2Pi - 0.5 * ctx.kw.log_det() - 0.5 * tr +
                        0.5 * (c.log_det + N * (1.0 + kLog2Pi)));
      for (Eigen::Index i : ctx.groups[g]) total += -0.5 * V.col(i * q + j).squaredNorm();
    }
  }

  // scale parameters
  total += ig_expected_log_prior(pr.sigma_y2, post.q_sigma_y2) + ig_entropy(post.q_sigma_y2);
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto& qs = post.q_sigma_f2[static_cast<std::size_t>(j)];
    total += ig_expected_log_prior(pr.sigma_f2, qs) + ig_entropy(qs);
    if (post.ard) {
      const auto& qa = post.q_a[static_cast<std::size_t>(j)];
      total += ig_expected_log_prior(pr.ard, qa) + ig_entropy(qa);
    }
  }
  return total;
}

void update_fhat(const VbContext& ctx, VariationalPosterior& post) {
  const auto& data = ctx.data;
  const Eigen::Index p = data.p(), q = ctx.q();
  const double tau_y = ig_mean_inverse(post.q_sigma_y2);
  Eigen::VectorXd s(p);
  for (Eigen::Index n = 0; n < data.n(); ++n) {
    if (!ctx.active_rows[static_cast<std::size_t>(n)]) continue;
    for (Eigen::Index i = 0; i < p; ++i) {
      s(i) = 0.0;
      for (Eigen::Index j = 0; j < q; ++j) s(i) += post.w_mean(n, i * q + j) * post.fhat_mean(n, j);
    }
    for (Eigen::Index j = 0; j < q; ++j) {
      const double tau_f = ig_mean_inverse(post.q_sigma_f2[static_cast<std::size_t>(j)]);
      double prec = tau_f;
      double lin = tau_f * post.q_f[static_cast<std::size_t>(j)].mean(n);
      const double old = post.fhat_mean(n, j);
      for (Eigen::Index i = 0; i < p; ++i) {
        if (!data.mask(n, i)) continue;
        const double w = post.w_mean(n, i * q + j);
        const double w2 = w * w + post.w_var(n, i, j);
        const double r = data.Y(n, i) - (s(i) - w * old);
        prec += tau_y * w2;
        lin += tau_y * w * r;
      }
      const double mean = lin / prec;
      require_finite(mean, "fhat");
      post.fhat_mean(n, j) = mean;
      post.fhat_var(n, j) = 1.0 / prec;
      for (Eigen::Index i = 0; i < p; ++i)
        if (data.mask(n, i)) s(i) += post.w_mean(n, i * q + j) * (mean - old);
    }
  }
}

void update_nodes(const VbContext& ctx, VariationalPosterior& post) {
  const Eigen::Index n_rows = ctx.data.n();
  for (Eigen::Index j = 0; j < ctx.q(); ++j) {
    const double tau_f = ig_mean_inverse(post.q_sigma_f2[static_cast<std::size_t>(j)]);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n_rows), b = Eigen::VectorXd::Zero(n_rows);
    for (Eigen::Index n = 0; n < n_rows; ++n) {
      if (!ctx.active_rows[static_cast<std::size_t>(n)]) continue;
      d(n) = tau_f;
      b(n) = tau_f * post.fhat_mean(n, j);
    }
    const Eigen::MatrixXd L = ctx.kf.L / std::sqrt(post.inv_a(j));
    GaussianFactor g = site_posterior(L, d, b);
    require_finite(g.cov, "f[" + std::to_string(j) + "]");
    require_finite(g.mean, "f[" + std::to_string(j) + "]");
    post.q_f[static_cast<std::size_t>(j)] = std::move(g);
  }
}

GaussianFactor site_posterior(const Eigen::MatrixXd& prior_chol_lower, const Eigen::VectorXd& d,
                              const Eigen::VectorXd& b) {
  if (d.size() != prior_chol_lower.rows() || b.size() != d.size())
    throw InputError("site_posterior: dimension mismatch");
  if ((d.array() < 0.0).any()) throw InputError("site precisions must be nonnegative");
  GaussianFactor g = site_covariance(prior_chol_lower, d);
  g.mean = g.cov * b;
  return g;
}

void update_weights(const VbContext& ctx, VariationalPosterior& post) {
  const auto& data = ctx.data;
  const Eigen::Index n_rows = data.n(), q = ctx.q();
  const double tau_y = ig_mean_inverse(post.q_sigma_y2);
  for (Eigen::Index j = 0; j < q; ++j) {
    for (std::size_t g = 0; g < ctx.groups.size(); ++g) {
      const auto& members = ctx.groups[g];
      const Eigen::Index first = members.front();
      Eigen::VectorXd d = Eigen::VectorXd::Zero(n_rows);
      for (Eigen::Index n = 0; n < n_rows; ++n) {
        if (!data.mask(n, first)) continue;
        const double f = post.fhat_mean(n, j);
        d(n) = tau_y * (f * f + post.fhat_var(n, j));
      }
      GaussianFactor cov = site_covariance(ctx.kw.L, d);
      require_finite(cov.cov, "W[:," + std::to_string(j) + "]");

      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n_rows, static_cast<Eigen::Index>(members.size()));
      for (std::size_t m = 0; m < members.size(); ++m) {
        const Eigen::Index i = members[m];
        for (Eigen::Index n = 0; n < n_rows; ++n) {
          if (!data.mask(n, i)) continue;
          double others = 0.0;
          for (Eigen::Index k = 0; k < q; ++k)
            if (k != j) others += post.w_mean(n, i * q + k) * post.fhat_mean(n, k);
          B(n, static_cast<Eigen::Index>(m)) = tau_y * post.fhat_mean(n, j) * (data.Y(n, i) - others);
        }
      }
      const Eigen::MatrixXd means = cov.cov * B;
      require_finite(means, "W[:," + std::to_string(j) + "]");
      for (std::size_t m = 0; m < members.size(); ++m)
        post.w_mean.col(members[m] * q + j) = means.col(static_cast<Eigen::Index>(m));
      post.q_w_cov[g * static_cast<std::size_t>(q) + static_cast<std::size_t>(j)] = std::move(cov);
    }
  }
}

void update_sigma_f(const VbContext& ctx, VariationalPosterior& post) {
  const auto& prior = ctx.hyp.priors.sigma_f2;
  for (Eigen::Index j = 0; j < ctx.q(); ++j) {
    const auto& qf = post.q_f[static_cast<std::size_t>(j)];
    double sum = 0.0;
    for (Eigen::Index n = 0; n < ctx.data.n(); ++n) {
      if (!ctx.active_rows[static_cast<std::size_t>(n)]) continue;
      const double dm = post.fhat_mean(n, j) - qf.mean(n);
      sum += dm * dm + post.fhat_var(n, j) + qf.cov(n, n);
    }
    InverseGamma ig{prior.shape + 0.5 * static_cast<double>(ctx.n_active), prior.rate + 0.5 * sum};
    require_finite(ig.rate, "sigma_f2[" + std::to_string(j) + "]");
    post.q_sigma_f2[static_cast<std::size_t>(j)] = ig;
  }
}

void update_sigma_y(const VbContext& ctx, VariationalPosterior& post) {
  const auto& prior = ctx.hyp.priors.sigma_y2;
  double sum = 0.0;
  for (Eigen::Index n = 0; n < ctx.data.n(); ++n)
    for (Eigen::Index i = 0; i < ctx.data.p(); ++i) {
      if (!ctx.data.mask(n, i)) continue;
      const auto [sm, sv] = post.s_site(i, n);
      const double r = ctx.data.Y(n, i) - sm;
      sum += r * r + sv;
    }
  InverseGamma ig{prior.shape + 0.5 * static_cast<double>(ctx.n_obs), prior.rate + 0.5 * sum};
  require_finite(ig.rate, "sigma_y2");
  post.q_sigma_y2 = ig;
}

IgMessage ard_message(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                      const CholFactor& unit_gram) {
  const double shape = 0.5 * static_cast<double>(mean.size()) - 1.0;
  const double rate = 0.5 * expected_quadratic(unit_gram, mean, cov);
  return {shape, rate, shape <= 0.0};
}

InverseGamma combine_ard(const InverseGamma& prior, const IgMessage& msg) {
  return {prior.shape + msg.shape + 1.0, prior.rate + msg.rate};
}

void update_ard(const VbContext& ctx, VariationalPosterior& post) {
  if (!post.ard) return;
  for (Eigen::Index j = 0; j < ctx.q(); ++j) {
    const auto& qf = post.q_f[static_cast<std::size_t>(j)];
    const InverseGamma ig = combine_ard(ctx.hyp.priors.ard, ard_message(qf.mean, qf.cov, ctx.kf));
    require_finite(ig.rate, "a[" + std::to_string(j) + "]");
    post.q_a[static_cast<std::size_t>(j)] = ig;
  }
}

void estep(const VbContext& ctx, VariationalPosterior& post, const EStepObserver& observer) {
  auto step = [&](const char* name, void (*update)(const VbContext&, VariationalPosterior&)) {
    update(ctx, post);
    if (observer) observer(name, elbo(ctx, post));
  };
  step("fhat", update_fhat);
  step("f", update_nodes);
  step("W", update_weights);
  step("sigma_f2", update_sigma_f);
  step("sigma_y2", update_sigma_y);
  step("a", update_ard);
}

double expected_log_prior(const CholFactor& K, const Eigen::MatrixXd& S, double inv_scale,
                          double count) {
  const Eigen::MatrixXd B = K.solve_lower(S);
  const double tr = K.solve_lower(B.transpose()).trace();
  const double n = static_cast<double>(K.size());
  return -0.5 * count * K.log_det() - 0.5 * inv_scale * tr - 0.5 * count * n * kLog2Pi;
}

double expected_log_prior_grad(const CholFactor& K, const Eigen::MatrixXd& dK,
                               const Eigen::MatrixXd& S, double inv_scale, double count) {
  const Eigen::MatrixXd Kinv_dK = K.solve(dK);
  const Eigen::MatrixXd Kinv_S = K.solve(S);
  // tr(K^-1 dK K^-1 S) = sum_ab (K^-1 dK)_ab (K^-1 S)_ba
  const double quad = (Kinv_dK.array() * Kinv_S.transpose().array()).sum();
  return -0.5 * count * Kinv_dK.trace() + 0.5 * inv_scale * quad;
}

namespace {

struct LengthScaleSearch {
  KernelSpec spec;
  bool moved = false;
  bool exhausted = false;
  double before = 0.0;
  double after = 0.0;
};

LengthScaleSearch optimize_length_scale(const KernelSpec& start, const Inputs& X,
                                        const Eigen::MatrixXd& S, double count,
                                        const VbConfig& config) {
  const double span = input_span(X);
  const double lo = std::log(1e-3 * span), hi = std::log(1e3 * span);
  auto objective = [&](double log_l) {
    try {
      const CholFactor K = safe_cholesky(gram(start.with_length_scale(std::exp(log_l)), X));
      return expected_log_prior(K, S, 1.0, count);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto gradient = [&](double log_l) {
    const KernelSpec s = start.with_length_scale(std::exp(log_l));
    const CholFactor K = safe_cholesky(gram(s, X));
    return expected_log_prior_grad(K, gram_dlog_length(s, X), S, 1.0, count);
  };

  LengthScaleSearch out{start};
  double x = std::log(start.length_scale());
  double fx = objective(x);
  out.before = fx;
  for (int it = 0; it < config.mstep_iters; ++it) {
    double g = 0.0;
    try {
      g = gradient(x);
    } catch (const Error&) {
      break;
    }
    if (!std::isfinite(g) || std::abs(g) < 1e-9) break;
    double step = std::clamp(g, -1.0, 1.0);
    bool accepted = false;
    for (int ls = 0; ls < config.mstep_max_linesearch; ++ls, step *= 0.5) {
      const double xn = std::clamp(x + step, lo, hi);
      if (xn == x) continue;
      const double fn = objective(xn);
      if (fn > fx + 1e-4 * (xn - x) * g && fn > fx) {
        x = xn;
        fx = fn;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (it == 0 && std::abs(g) > 1e-6) out.exhausted = true;
      break;
    }
    out.moved = true;
  }
  out.after = fx;
  if (out.moved) out.spec = start.with_length_scale(std::exp(x));
  return out;
}

}  // namespace

MStepResult mstep(VbContext& ctx, const VariationalPosterior& post, const VbConfig& config) {
  MStepResult res;
  const Eigen::Index n = ctx.data.n(), q = ctx.q(), p = ctx.data.p();
  if (config.learn_theta_f) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < q; ++j) {
      const auto& qf = post.q_f[static_cast<std::size_t>(j)];
      S += post.inv_a(j) * (qf.mean * qf.mean.transpose() + qf.cov);
    }
    const auto r = optimize_length_scale(ctx.hyp.theta_f, ctx.data.X, S, static_cast<double>(q), config);
    res.objective_before += r.before;
    res.objective_after += r.after;
    if (r.exhausted) res.warnings.push_back("node length-scale line search exhausted; keeping previous value");
    if (r.moved) {
      ctx.hyp.theta_f = r.spec;
      res.theta_f_moved = true;
    }
  }
  if (config.learn_theta_w) {
    Eigen::MatrixXd S = post.w_mean * post.w_mean.transpose();
    for (std::size_t g = 0; g < ctx.groups.size(); ++g)
      for (Eigen::Index j = 0; j < q; ++j)
        S += static_cast<double>(ctx.groups[g].size()) *
             post.q_w_cov[g * static_cast<std::size_t>(q) + static_cast<std::size_t>(j)].cov;
    const auto r = optimize_length_scale(ctx.hyp.theta_w, ctx.data.X, S, static_cast<double>(p * q), config);
    res.objective_before += r.before;
    res.objective_after += r.after;
    if (r.exhausted) res.warnings.push_back("weight length-scale line search exhausted; keeping previous value");
    if (r.moved) {
      ctx.hyp.theta_w = r.spec;
      res.theta_w_moved = true;
    }
  }
  if (res.theta_f_moved || res.theta_w_moved) ctx.refactor();
  return res;
}

namespace {

Hyperparams summarize(const VbContext& ctx, const VariationalPosterior& post) {
  Hyperparams h = ctx.hyp;
  h.sigma_y = std::sqrt(ig_mean_or_fallback(post.q_sigma_y2));
  double sf2 = 0.0;
  for (const auto& ig : post.q_sigma_f2) sf2 += ig_mean_or_fallback(ig);
  h.sigma_f = std::sqrt(sf2 / static_cast<double>(post.q_sigma_f2.size()));
  if (post.ard)
    for (Eigen::Index j = 0; j < ctx.q(); ++j) h.ard(j) = ig_mean_or_fallback(post.q_a[static_cast<std::size_t>(j)]);
  return h;
}

}  // namespace

VbFit fit_vb_single(const Dataset& data, Eigen::Index q, const VbConfig& config,
                    const Hyperparams& init_hyp, int restart) {
  if (q < 1) throw InputError("q must be >= 1");
  if (config.max_em_iters < 1 || config.estep_inner_iters < 1 || !(config.objective_tol > 0.0))
    throw InputError("VB config needs positive iteration counts and tolerance");
  Hyperparams hyp = init_hyp;
  if (hyp.ard.size() != q) hyp.ard = Eigen::VectorXd::Ones(q);
  VbContext ctx = VbContext::make(data, hyp, config.ard);
  Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(restart));
  VariationalPosterior post = initialize_posterior(ctx, rng, config.init_std);

  VbFit fit;
  fit.restart = restart;
  double current = elbo(ctx, post);
  require_finite(current, "objective");
  fit.objective_trace.push_back(current);
  for (int it = 0; it < config.max_em_iters; ++it) {
    const double start = current;
    for (int s = 0; s < config.estep_inner_iters; ++s) {
      estep(ctx, post);
      current = elbo(ctx, post);
      require_finite(current, "objective");
      fit.objective_trace.push_back(current);
    }
    if (config.learn_theta_f || config.learn_theta_w) {
      const MStepResult m = mstep(ctx, post, config);
      for (const auto& w : m.warnings) fit.warnings.push_back("iteration " + std::to_string(it) + ": " + w);
      if (m.theta_f_moved || m.theta_w_moved) {
        current = elbo(ctx, post);
        require_finite(current, "objective");
        fit.objective_trace.push_back(current);
      }
    }
    fit.iterations = it + 1;
    if (std::abs(current - start) / std::max(1.0, std::abs(start)) < config.objective_tol) break;
  }
  fit.objective = current;
  fit.hyp = summarize(ctx, post);
  fit.posterior = std::move(post);
  fit.X = data.X;
  return fit;
}

VbFit fit_vb(const Dataset& data, Eigen::Index q, const VbConfig& config,
             const Hyperparams& init_hyp) {
  const int restarts = std::max(1, config.n_restarts);
  std::vector<std::optional<VbFit>> fits(static_cast<std::size_t>(restarts));
  std::vector<std::string> errors(static_cast<std::size_t>(restarts));
  auto run = [&](int r) {
    try {
      fits[static_cast<std::size_t>(r)] = fit_vb_single(data, q, config, init_hyp, r);
    } catch (const NumericalError& e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    } catch (const SingularMatrixError& e) {
      errors[static_cast<std::size_t>(r)] = e.what();
    }
  };
  const int workers = std::clamp(config.threads, 1, restarts);
  if (workers == 1) {
    for (int r = 0; r < restarts; ++r) run(r);
  } else {
    for (int base = 0; base < restarts; base += workers) {
      std::vector<std::future<void>> jobs;
      for (int r = base; r < std::min(restarts, base + workers); ++r)
        jobs.push_back(std::async(std::launch::async, run, r));
      for (auto& j : jobs) j.get();
    }
  }
  std::optional<VbFit> best;
  for (auto& f : fits)
    if (f && (!best || f->objective > best->objective)) best = std::move(f);
  if (!best) {
    std::string msg = "all VB restarts failed";
    if (!errors.empty() && !errors.front().empty()) msg += ": " + errors.front();
    throw FitFailure(msg);
  }
  return std::move(*best);
}

PredictiveDistribution vb_predictive_moments(const Eigen::MatrixXd& w_mean,
                                             const Eigen::MatrixXd& w_var,
                                             const Eigen::VectorXd& f_mean,
                                             const Eigen::VectorXd& f_var, double sigma_y2) {
  const Eigen::Index p = w_mean.rows(), q = w_mean.cols();
  if (w_var.rows() != p || w_var.cols() != q || f_mean.size() != q || f_var.size() != q)
    throw InputError("vb_predictive_moments: dimension mismatch");
  const Eigen::VectorXd mean = w_mean * f_mean;
  Eigen::MatrixXd cov = w_mean * f_var.asDiagonal() * w_mean.transpose();
  const Eigen::VectorXd f2 = f_mean.array().square() + f_var.array();
  for (Eigen::Index i = 0; i < p; ++i) cov(i, i) += w_var.row(i).dot(f2) + sigma_y2;
  return gaussian_moments(mean, 0.5 * (cov + cov.transpose()));
}

Eigen::MatrixXd vb_noise_covariance(const Eigen::MatrixXd& w_mean, const Eigen::MatrixXd& w_var,
                                    const Eigen::VectorXd& sigma_f2, double sigma_y2) {
  const Eigen::Index p = w_mean.rows();
  if (sigma_f2.size() != w_mean.cols() || w_var.rows() != p || w_var.cols() != w_mean.cols())
    throw InputError("vb_noise_covariance: dimension mismatch");
  Eigen::MatrixXd C(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = a; b < p; ++b) {
      double v = 0.0;
      for (Eigen::Index k = 0; k < w_mean.cols(); ++k) v += sigma_f2(k) * w_mean(a, k) * w_mean(b, k);
      C(a, b) = C(b, a) = v;
    }
  for (Eigen::Index a = 0; a < p; ++a) C(a, a) += w_var.row(a).dot(sigma_f2) + sigma_y2;
  return C;
}

VbPointMoments vb_point_moments(const VbFit& fit, const Eigen::VectorXd& x_star) {
  const auto& post = fit.posterior;
  const Eigen::Index p = post.shape.p, q = post.shape.q;
  if (x_star.size() != fit.X.cols()) throw InputError("test input has the wrong dimension");
  const CholFactor kf = safe_cholesky(gram(fit.hyp.theta_f, fit.X), "node covariance K_f");
  const CholFactor kw = safe_cholesky(gram(fit.hyp.theta_w, fit.X), "weight covariance K_w");
  const Inputs xs = x_star.transpose();

  VbPointMoments m;
  m.f_mean.resize(q);
  m.f_var.resize(q);
  const Eigen::VectorXd kf_star = cross_gram(fit.hyp.theta_f, fit.X, xs).col(0);
  const Eigen::VectorXd af = kf.solve(kf_star);
  const double f_prior_resid = std::max(0.0, fit.hyp.theta_f.at_distance(0.0) - kf_star.dot(af));
  for (Eigen::Index j = 0; j < q; ++j) {
    const auto& qf = post.q_f[static_cast<std::size_t>(j)];
    m.f_mean(j) = af.dot(qf.mean);
    m.f_var(j) = f_prior_resid / post.inv_a(j) + af.dot(qf.cov * af);
  }
  const Eigen::VectorXd kw_star = cross_gram(fit.hyp.theta_w, fit.X, xs).col(0);
  const Eigen::VectorXd aw = kw.solve(kw_star);
  const double w_prior_resid = std::max(0.0, fit.hyp.theta_w.at_distance(0.0) - kw_star.dot(aw));
  m.w_mean.resize(p, q);
  m.w_var.resize(p, q);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) {
      m.w_mean(i, j) = aw.dot(post.w_mean.col(i * q + j));
      m.w_var(i, j) = w_prior_resid + aw.dot(post.w_cov(i, j).cov * aw);
    }
  m.sigma_f2.resize(q);
  for (Eigen::Index j = 0; j < q; ++j) m.sigma_f2(j) = ig_mean_or_fallback(post.q_sigma_f2[static_cast<std::size_t>(j)]);
  m.sigma_y2 = ig_mean_or_fallback(post.q_sigma_y2);
  return m;
}

PredictiveDistribution predict_vb(const VbFit& fit, const Eigen::VectorXd& x_star) {
  const VbPointMoments m = vb_point_moments(fit, x_star);
  // The node at a new input carries fresh node noise.
  PredictiveDistribution d =
      vb_predictive_moments(m.w_mean, m.w_var, m.f_mean, m.f_var + m.sigma_f2, m.sigma_y2);
  d.covariance = clamp_psd(d.covariance);
  return d;
}

Eigen::MatrixXd noise_covariance_vb(const VbFit& fit, const Eigen::VectorXd& x_star) {
  const VbPointMoments m = vb_point_moments(fit, x_star);
  return vb_noise_covariance(m.w_mean, m.w_var, m.sigma_f2, m.sigma_y2);
}

ModelSelection model_select_q(const Dataset& data, const std::vector<Eigen::Index>& q_candidates,
                              const VbConfig& config, const Hyperparams& init_hyp) {
  if (q_candidates.empty()) throw InputError("model selection needs at least one candidate q");
  std::vector<Eigen::Index> qs = q_candidates;
  std::sort(qs.begin(), qs.end());
  qs.erase(std::unique(qs.begin(), qs.end()), qs.end());
  ModelSelection sel;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index q : qs) {
    Hyperparams h = init_hyp;
    h.ard = Eigen::VectorXd::Ones(q);
    try {
      VbFit fit = fit_vb(data, q, config, h);
      sel.table.emplace_back(q, fit.objective);
      if (fit.objective > best) {
        best = fit.objective;
        sel.best_q = q;
      }
      sel.fits.push_back(std::move(fit));
    } catch (const FitFailure&) {
      sel.table.emplace_back(q, -std::numeric_limits<double>::infinity());
    }
  }
  if (sel.best_q == 0) throw FitFailure("every candidate q failed to fit");
  return sel;
}

}  // namespace gprn
