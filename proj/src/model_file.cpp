#include "gprn/model_file.hpp"

#include <fstream>
#include <iterator>

#include <json.hpp>

#include "gprn/errors.hpp"

namespace gprn {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json to_json(const Eigen::MatrixXd& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>(), cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("model file: matrix size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(data.data(), rows, cols);
}

json to_json(const InverseGamma& ig) { return {ig.shape, ig.rate}; }
InverseGamma ig_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

json to_json(const Hyperparams& h) {
  return {{"theta_f", format_kernel(h.theta_f)},
          {"theta_w", format_kernel(h.theta_w)},
          {"sigma_f", h.sigma_f},
          {"sigma_y", h.sigma_y},
          {"ard", to_json(Eigen::MatrixXd(h.ard))},
          {"prior_sigma_f2", to_json(h.priors.sigma_f2)},
          {"prior_sigma_y2", to_json(h.priors.sigma_y2)},
          {"prior_ard", to_json(h.priors.ard)}};
}

Hyperparams hyp_from(const json& j) {
  Hyperparams h;
  h.theta_f = parse_kernel(j.at("theta_f").get<std::string>());
  h.theta_w = parse_kernel(j.at("theta_w").get<std::string>());
  h.sigma_f = j.at("sigma_f").get<double>();
  h.sigma_y = j.at("sigma_y").get<double>();
  h.ard = matrix_from(j.at("ard")).col(0);
  h.priors.sigma_f2 = ig_from(j.at("prior_sigma_f2"));
  h.priors.sigma_y2 = ig_from(j.at("prior_sigma_y2"));
  h.priors.ard = ig_from(j.at("prior_ard"));
  return h;
}

json to_json(const GaussianFactor& g) {
  return {{"mean", to_json(Eigen::MatrixXd(g.mean))}, {"cov", to_json(g.cov)}, {"log_det", g.log_det}};
}

GaussianFactor factor_from(const json& j) {
  GaussianFactor g;
  const Eigen::MatrixXd m = matrix_from(j.at("mean"));
  g.mean = m.size() ? Eigen::VectorXd(m.col(0)) : Eigen::VectorXd();
  g.cov = matrix_from(j.at("cov"));
  g.log_det = j.at("log_det").get<double>();
  return g;
}

json to_json(const VbFit& fit) {
  const auto& post = fit.posterior;
  json qf = json::array(), qw = json::array(), sf = json::array(), qa = json::array();
  for (const auto& g : post.q_f) qf.push_back(to_json(g));
  for (const auto& g : post.q_w_cov) qw.push_back(to_json(g));
  for (const auto& ig : post.q_sigma_f2) sf.push_back(to_json(ig));
  for (const auto& ig : post.q_a) qa.push_back(to_json(ig));
  return {{"shape", {post.shape.n, post.shape.p, post.shape.q, post.shape.d}},
          {"q_f", qf},
          {"w_mean", to_json(post.w_mean)},
          {"q_w_cov", qw},
          {"output_group", post.output_group},
          {"fhat_mean", to_json(post.fhat_mean)},
          {"fhat_var", to_json(post.fhat_var)},
          {"q_sigma_y2", to_json(post.q_sigma_y2)},
          {"q_sigma_f2", sf},
          {"q_a", qa},
          {"ard", post.ard},
          {"hyp", to_json(fit.hyp)},
          {"X", to_json(fit.X)},
          {"objective_trace", fit.objective_trace},
          {"objective", fit.objective},
          {"restart", fit.restart},
          {"iterations", fit.iterations},
          {"warnings", fit.warnings}};
}

VbFit vb_from(const json& j) {
  VbFit fit;
  auto& post = fit.posterior;
  const auto s = j.at("shape").get<std::vector<Eigen::Index>>();
  if (s.size() != 4) throw IoError("model file: bad shape");
  post.shape = {s[0], s[1], s[2], s[3]};
  for (const auto& g : j.at("q_f")) post.q_f.push_back(factor_from(g));
  post.w_mean = matrix_from(j.at("w_mean"));
  for (const auto& g : j.at("q_w_cov")) post.q_w_cov.push_back(factor_from(g));
  post.output_group = j.at("output_group").get<std::vector<Eigen::Index>>();
  post.fhat_mean = matrix_from(j.at("fhat_mean"));
  post.fhat_var = matrix_from(j.at("fhat_var"));
  post.q_sigma_y2 = ig_from(j.at("q_sigma_y2"));
  for (const auto& ig : j.at("q_sigma_f2")) post.q_sigma_f2.push_back(ig_from(ig));
  for (const auto& ig : j.at("q_a")) post.q_a.push_back(ig_from(ig));
  post.ard = j.at("ard").get<bool>();
  fit.hyp = hyp_from(j.at("hyp"));
  fit.X = matrix_from(j.at("X"));
  fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  fit.objective = j.at("objective").get<double>();
  fit.restart = j.at("restart").get<int>();
  fit.iterations = j.at("iterations").get<int>();
  fit.warnings = j.at("warnings").get<std::vector<std::string>>();
  return fit;
}

json to_json(const McmcChain& chain) {
  json samples = json::array();
  for (const auto& s : chain.samples) samples.push_back(to_json(Eigen::MatrixXd(pack(s))));
  return {{"shape", {chain.shape.n, chain.shape.p, chain.shape.q, chain.shape.d}},
          {"X", to_json(chain.X)},
          {"samples", samples},
          {"log_liks", chain.log_liks},
          {"shrink_counts", chain.shrink_counts},
          {"positive_weights", chain.positive_weights}};
}

McmcChain mcmc_from(const json& j) {
  McmcChain chain;
  const auto s = j.at("shape").get<std::vector<Eigen::Index>>();
  if (s.size() != 4) throw IoError("model file: bad shape");
  chain.shape = {s[0], s[1], s[2], s[3]};
  chain.X = matrix_from(j.at("X"));
  for (const auto& u : j.at("samples")) chain.samples.push_back(unpack(matrix_from(u).col(0), chain.shape));
  chain.log_liks = j.at("log_liks").get<std::vector<double>>();
  chain.shrink_counts = j.at("shrink_counts").get<std::vector<int>>();
  chain.positive_weights = j.at("positive_weights").get<bool>();
  return chain;
}

json to_json(const Transforms& t) {
  json arr = json::array();
  for (const auto& o : t.outputs) arr.push_back({{"log", o.log}, {"mean", o.mean}, {"scale", o.scale}});
  return arr;
}

Transforms transforms_from(const json& j) {
  Transforms t;
  for (const auto& o : j)
    t.outputs.push_back({o.at("log").get<bool>(), o.at("mean").get<double>(), o.at("scale").get<double>()});
  return t;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const FittedModel& model) {
  json j = {{"format", "gprn-model"},
            {"version", kFormatVersion},
            {"backend", model.backend == Backend::Vb ? "vb" : "mcmc"},
            {"q", model.q},
            {"hyp", to_json(model.hyp)},
            {"transforms", to_json(model.transforms)},
            {"input_names", model.input_names},
            {"output_names", model.output_names},
            {"n_mix", model.n_mix},
            {"seed", model.seed}};
  if (model.vb) j["vb"] = to_json(*model.vb);
  if (model.mcmc) j["mcmc"] = to_json(*model.mcmc);
  return json::to_cbor(j);
}

FittedModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  json j;
  try {
    j = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw IoError(std::string("model file is not valid CBOR: ") + e.what());
  }
  try {
    if (j.at("format") != "gprn-model") throw IoError("not a gprn model file");
    if (j.at("version").get<int>() != kFormatVersion) throw IoError("unsupported model file version");
    FittedModel m;
    const auto backend = j.at("backend").get<std::string>();
    if (backend == "vb") m.backend = Backend::Vb;
    else if (backend == "mcmc") m.backend = Backend::Mcmc;
    else throw IoError("model file: unknown backend '" + backend + "'");
    m.q = j.at("q").get<Eigen::Index>();
    m.hyp = hyp_from(j.at("hyp"));
    m.transforms = transforms_from(j.at("transforms"));
    m.input_names = j.at("input_names").get<std::vector<std::string>>();
    m.output_names = j.at("output_names").get<std::vector<std::string>>();
    m.n_mix = j.at("n_mix").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("vb")) m.vb = vb_from(j.at("vb"));
    if (j.contains("mcmc")) m.mcmc = mcmc_from(j.at("mcmc"));
    if (m.backend == Backend::Vb && !m.vb) throw IoError("model file: VB backend without a posterior");
    if (m.backend == Backend::Mcmc && !m.mcmc) throw IoError("model file: MCMC backend without a chain");
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const FittedModel& model) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::vector<PredictiveDistribution> predict_model(const FittedModel& model, const Inputs& Xs) {
  if (Xs.cols() != model.d()) throw InputError("test inputs have " + std::to_string(Xs.cols()) +
                                               " columns, model expects " + std::to_string(model.d()));
  std::vector<PredictiveDistribution> out;
  if (model.backend == Backend::Vb) {
    for (Eigen::Index m = 0; m < Xs.rows(); ++m) out.push_back(predict_vb(*model.vb, Xs.row(m).transpose()));
  } else {
    out = predict_mcmc(*model.mcmc, model.hyp, Xs, model.n_mix, model.seed);
  }
  if (!model.transforms.empty())
    for (auto& d : out) d = invert_transforms(d, model.transforms);
  return out;
}

std::vector<Eigen::MatrixXd> noise_covariance_model(const FittedModel& model, const Inputs& Xs) {
  if (Xs.cols() != model.d()) throw InputError("grid inputs have the wrong dimension");
  std::vector<Eigen::MatrixXd> out;
  if (model.backend == Backend::Vb) {
    for (Eigen::Index m = 0; m < Xs.rows(); ++m) out.push_back(noise_covariance_vb(*model.vb, Xs.row(m).transpose()));
  } else {
    out = noise_covariance_mcmc(*model.mcmc, model.hyp, Xs);
  }
  if (!model.transforms.empty()) {
    Eigen::VectorXd scale(model.p());
    for (Eigen::Index i = 0; i < model.p(); ++i) scale(i) = model.transforms.outputs[static_cast<std::size_t>(i)].scale;
    for (auto& c : out) c = scale.asDiagonal() * c * scale.asDiagonal();
  }
  return out;
}

}  // namespace gprn
