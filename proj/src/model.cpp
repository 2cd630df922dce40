#include "gprn/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gprn/errors.hpp"

namespace gprn {

void NetworkShape::validate() const {
  if (n < 1 || p < 1 || q < 1 || d < 1)
    throw InputError("network shape requires N, p, q, d >= 1");
}

Eigen::MatrixXd NetworkParams::weights_at(Eigen::Index row) const {
  Eigen::MatrixXd W(p(), q());
  for (Eigen::Index i = 0; i < p(); ++i)
    for (Eigen::Index j = 0; j < q(); ++j) W(i, j) = weight(row, i, j);
  return W;
}

Eigen::VectorXd pack(const NetworkParams& params) {
  const Eigen::Index nf = params.fhat.size();
  if (params.w.rows() != params.fhat.rows() || params.w.cols() % std::max<Eigen::Index>(1, params.q()))
    throw InputError("network params have inconsistent dimensions");
  Eigen::VectorXd u(nf + params.w.size());
  u.head(nf) = Eigen::Map<const Eigen::VectorXd>(params.fhat.data(), nf);
  u.tail(params.w.size()) = Eigen::Map<const Eigen::VectorXd>(params.w.data(), params.w.size());
  return u;
}

NetworkParams unpack(const Eigen::VectorXd& u, const NetworkShape& shape) {
  shape.validate();
  if (u.size() != shape.packed_size())
    throw InputError("packed vector has length " + std::to_string(u.size()) + ", expected " +
                     std::to_string(shape.packed_size()));
  NetworkParams out;
  out.fhat = Eigen::Map<const Eigen::MatrixXd>(u.data(), shape.n, shape.q);
  out.w = Eigen::Map<const Eigen::MatrixXd>(u.data() + shape.n * shape.q, shape.n,
                                            shape.p * shape.q);
  return out;
}

Hyperparams Hyperparams::defaults(Eigen::Index q) {
  Hyperparams h;
  h.ard = Eigen::VectorXd::Ones(q);
  return h;
}

void Hyperparams::validate(Eigen::Index q) const {
  if (!(sigma_f >= 0.0) || !std::isfinite(sigma_f)) throw InputError("sigma_f must be >= 0");
  if (!(sigma_y > 0.0) || !std::isfinite(sigma_y)) throw InputError("sigma_y must be > 0");
  if (ard.size() != q)
    throw InputError("ARD vector has " + std::to_string(ard.size()) + " entries, expected " +
                     std::to_string(q));
  if ((ard.array() <= 0.0).any()) throw InputError("ARD variances must be positive");
  for (const auto& ig : {priors.sigma_f2, priors.sigma_y2, priors.ard})
    if (!(ig.shape > 0.0 && ig.rate > 0.0))
      throw InputError("inverse-Gamma prior parameters must be positive");
}

double log_likelihood(const Eigen::Ref<const Eigen::MatrixXd>& fhat,
                      const Eigen::Ref<const Eigen::MatrixXd>& w, const Eigen::MatrixXd& Y,
                      const Mask& mask, double sigma_y, bool exp_weights,
                      std::size_t* mult_adds) {
  if (!(sigma_y > 0.0)) throw InputError("sigma_y must be positive");
  const Eigen::Index n = fhat.rows(), q = fhat.cols(), p = Y.cols();
  if (Y.rows() != n || w.rows() != n || w.cols() != p * q || mask.rows() != n ||
      mask.cols() != p)
    throw InputError("log_likelihood: dimension mismatch");

  const double log_norm = -0.5 * std::log(2.0 * M_PI * sigma_y * sigma_y);
  const double inv_var = 1.0 / (sigma_y * sigma_y);
  double total = 0.0;
  std::size_t ops = 0;
  for (Eigen::Index row = 0; row < n; ++row) {
    for (Eigen::Index i = 0; i < p; ++i) {
      if (!mask(row, i)) continue;
      double s = 0.0;
      for (Eigen::Index j = 0; j < q; ++j) {
        const double wij = w(row, i * q + j);
        s += (exp_weights ? std::exp(wij) : wij) * fhat(row, j);
      }
      ops += static_cast<std::size_t>(q);
      const double r = Y(row, i) - s;
      total += log_norm - 0.5 * r * r * inv_var;
    }
  }
  if (mult_adds) *mult_adds = ops;
  return total;
}

double log_likelihood(const NetworkParams& params, const Eigen::MatrixXd& Y, const Mask& mask,
                      double sigma_y) {
  return log_likelihood(params.fhat, params.w, Y, mask, sigma_y);
}

double mixing_kernel(const Hyperparams& hyp, const Eigen::VectorXd& w_x,
                     const Eigen::VectorXd& w_xp, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& x_prime, bool same_evaluation) {
  const Eigen::Index q = w_x.size();
  if (w_xp.size() != q || hyp.ard.size() != q)
    throw InputError("mixing_kernel: weight rows must have q entries");
  const double kf = evaluate(hyp.theta_f, x, x_prime);
  const double node_noise = same_evaluation ? hyp.sigma_f * hyp.sigma_f : 0.0;
  double k = 0.0;
  for (Eigen::Index j = 0; j < q; ++j) k += w_x(j) * (hyp.ard(j) * kf + node_noise) * w_xp(j);
  if (same_evaluation) k += hyp.sigma_y * hyp.sigma_y;
  return k;
}

Eigen::MatrixXd noise_covariance(const Eigen::MatrixXd& W, double sigma_f, double sigma_y) {
  const Eigen::Index p = W.rows();
  Eigen::MatrixXd S(p, p);
  const double sf2 = sigma_f * sigma_f, sy2 = sigma_y * sigma_y;
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = a; b < p; ++b) {
      S(a, b) = sf2 * W.row(a).dot(W.row(b));
      S(b, a) = S(a, b);
    }
    S(a, a) += sy2;
  }
  return S;
}

Decomposition decompose(const Eigen::MatrixXd& W, const Eigen::VectorXd& f, double sigma_f,
                        double sigma_y, Rng& rng) {
  if (W.cols() != f.size()) throw InputError("decompose: W and f disagree on q");
  Decomposition d;
  d.signal = W * f;
  const Eigen::VectorXd eps = standard_normal_vector(rng, f.size());
  const Eigen::VectorXd z = standard_normal_vector(rng, W.rows());
  d.noise = sigma_f * (W * eps) + sigma_y * z;
  d.y = d.signal + d.noise;
  return d;
}

Eigen::MatrixXd apply_ard(const Eigen::MatrixXd& node_gram, double a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw InputError("ARD variance must be positive");
  return a * node_gram;
}

NetworkParams exp_weight_transform(const NetworkParams& params) {
  NetworkParams out = params;
  out.w = params.w.array().exp().matrix();
  return out;
}

Eigen::MatrixXd node_covariance(const Hyperparams& hyp, const Inputs& X, Eigen::Index j) {
  Eigen::MatrixXd K = apply_ard(gram(hyp.theta_f, X), hyp.ard(j));
  K.diagonal().array() += hyp.sigma_f * hyp.sigma_f;
  return K;
}

BlockPrior build_network_prior(const Hyperparams& hyp, const Inputs& X, Eigen::Index p,
                               Eigen::Index q) {
  hyp.validate(q);
  std::vector<Eigen::MatrixXd> nodes;
  const bool shared = (hyp.ard.array() == hyp.ard(0)).all();
  if (shared) {
    nodes.push_back(node_covariance(hyp, X, 0));
  } else {
    for (Eigen::Index j = 0; j < q; ++j) nodes.push_back(node_covariance(hyp, X, j));
  }
  return build_block_prior(nodes, gram(hyp.theta_w, X), p, q);
}

}  // namespace gprn
