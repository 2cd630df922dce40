#include "gprn/synthetic.hpp"

#include <cmath>
#include <string>

#include "gprn/errors.hpp"

namespace gprn {

Eigen::MatrixXd SyntheticTruth::weights_at(Eigen::Index n) const {
  const Eigen::Index q = f.cols(), p = signal.cols();
  Eigen::MatrixXd W(p, q);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < q; ++j) W(i, j) = w(n, i * q + j);
  return W;
}

Inputs default_grid(Eigen::Index n, Eigen::Index d) {
  if (n < 1 || d < 1) throw InputError("grid needs n >= 1 and d >= 1");
  Inputs X(n, d);
  if (d == 1) {
    for (Eigen::Index r = 0; r < n; ++r)
      X(r, 0) = n == 1 ? 0.0 : static_cast<double>(r) / static_cast<double>(n - 1);
    return X;
  }
  auto per_dim = static_cast<Eigen::Index>(std::ceil(std::pow(static_cast<double>(n), 1.0 / d) - 1e-9));
  per_dim = std::max<Eigen::Index>(per_dim, 2);
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index idx = r;
    for (Eigen::Index c = 0; c < d; ++c) {
      X(r, c) = static_cast<double>(idx % per_dim) / static_cast<double>(per_dim - 1);
      idx /= per_dim;
    }
  }
  return X;
}

namespace {

void fill_observations(SyntheticTruth& t, Rng& rng) {
  const Eigen::Index n = t.f.rows(), p = t.signal.cols();
  t.noise.resize(n, p);
  t.dataset.Y.resize(n, p);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Decomposition dec =
        decompose(t.weights_at(r), t.f.row(r).transpose(), t.hyp.sigma_f, t.hyp.sigma_y, rng);
    t.signal.row(r) = dec.signal.transpose();
    t.noise.row(r) = dec.noise.transpose();
    t.dataset.Y.row(r) = dec.y.transpose();
  }
  t.dataset.mask = Mask::Constant(n, p, true);
}

}  // namespace

SyntheticTruth generate(const NetworkShape& shape, const Hyperparams& hyp, const Inputs& X,
                        std::uint64_t seed) {
  shape.validate();
  hyp.validate(shape.q);
  if (X.rows() != shape.n || X.cols() != shape.d)
    throw InputError("synthetic inputs do not match the network shape");

  const Eigen::MatrixXd Kf = gram(hyp.theta_f, X);
  std::vector<Eigen::MatrixXd> nodes;
  for (Eigen::Index j = 0; j < shape.q; ++j) nodes.push_back(apply_ard(Kf, hyp.ard(j)));
  const BlockPrior prior = build_block_prior(nodes, gram(hyp.theta_w, X), shape.p, shape.q);

  Rng rng = make_rng(seed, 0);
  const NetworkParams params = unpack(prior_sample(prior, rng), shape);

  SyntheticTruth t;
  t.f = params.fhat;
  t.w = params.w;
  t.hyp = hyp;
  t.signal.resize(shape.n, shape.p);
  t.dataset.X = X;
  for (Eigen::Index c = 0; c < shape.d; ++c) t.dataset.input_names.push_back("x" + std::to_string(c + 1));
  for (Eigen::Index c = 0; c < shape.p; ++c) t.dataset.output_names.push_back("y" + std::to_string(c + 1));
  Rng noise_rng = make_rng(seed, 1);
  fill_observations(t, noise_rng);
  return t;
}

SyntheticTruth regenerate_noise(const SyntheticTruth& truth, std::uint64_t seed) {
  SyntheticTruth t = truth;
  Rng rng = make_rng(seed, 1);
  fill_observations(t, rng);
  return t;
}

}  // namespace gprn
