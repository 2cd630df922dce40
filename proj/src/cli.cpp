#include "gprn/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "gprn/data_io.hpp"
#include "gprn/errors.hpp"
#include "gprn/metrics.hpp"
#include "gprn/model_file.hpp"
#include "gprn/synthetic.hpp"

namespace gprn {
namespace {

using ordered_json = nlohmann::ordered_json;

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[gprn] " << msg << '\n';
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[gprn:debug] " << msg << '\n';
}

std::filesystem::path ensure_out_dir(const RunConfig& c) {
  std::error_code ec;
  std::filesystem::create_directories(c.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + c.out_dir.string() + ": " + ec.message());
  return c.out_dir;
}

ordered_json hyp_json(const Hyperparams& h) {
  ordered_json j;
  j["node_kernel"] = format_kernel(h.theta_f);
  j["weight_kernel"] = format_kernel(h.theta_w);
  j["sigma_f"] = h.sigma_f;
  j["sigma_y"] = h.sigma_y;
  j["ard"] = std::vector<double>(h.ard.data(), h.ard.data() + h.ard.size());
  return j;
}

Dataset load_training(const RunConfig& c, std::optional<Dataset>* test = nullptr) {
  if (c.data_path.empty()) throw InputError("config is missing data.path");
  Dataset data = load_csv(c.data_path, c.n_input_cols);
  if (!c.has_split) return data;
  auto [train, held] = split(data, c.split);
  if (test) *test = std::move(held);
  return train;
}

std::string matrix_header(const std::vector<std::string>& names, Eigen::Index d) {
  std::string h;
  for (Eigen::Index k = 0; k < d; ++k)
    h += (k ? "," : "") + (static_cast<std::size_t>(k) < names.size() ? names[static_cast<std::size_t>(k)]
                                                                       : "x" + std::to_string(k + 1));
  return h;
}

void write_metrics(const std::filesystem::path& path, const PredictionTable& pred, const Dataset& truth,
                   const TargetStats& train, bool use_mean, std::ostream& out) {
  if (pred.mean.rows() != truth.n() || pred.mean.cols() != truth.p())
    throw InputError("predictions are " + std::to_string(pred.mean.rows()) + "x" + std::to_string(pred.mean.cols()) +
                     ", truth is " + std::to_string(truth.n()) + "x" + std::to_string(truth.p()));
  if (pred.X.cols() != truth.d() || (pred.X - truth.X).cwiseAbs().maxCoeff() > 1e-9)
    throw InputError("prediction inputs do not match the truth inputs row by row");

  MetricReport r;
  r.smse = smse(pred.mean, truth.Y, truth.mask, SmseNormalizer::TestVariance, nullptr, &r.smse_per_output);
  r.msll = msll(pred.mean, pred.var, truth.Y, truth.mask, train, &r.msll_per_output);
  r.mae = mae(pred.mean, truth.Y, truth.mask, &r.mae_per_output);

  std::vector<Eigen::MatrixXd> covs;
  std::vector<Eigen::VectorXd> ys, means;
  for (Eigen::Index n = 0; n < truth.n(); ++n) {
    if (!truth.mask.row(n).all()) continue;
    covs.push_back(pred.cov[static_cast<std::size_t>(n)]);
    ys.push_back(truth.Y.row(n).transpose());
    means.push_back(use_mean ? Eigen::VectorXd(pred.mean.row(n).transpose()) : Eigen::VectorXd::Zero(truth.p()));
  }
  if (!covs.empty()) {
    std::vector<Eigen::VectorXd> centered;
    for (std::size_t t = 0; t < ys.size(); ++t) centered.push_back(ys[t] - means[t]);
    r.historical_mse = historical_mse(covs, centered);
    r.forecast_loglik = forecast_loglik(covs, ys, &means);
  }
  const std::string js = metric_report_json(r);
  write_text_file(path, js + "\n");
  out << js << '\n';
}

void write_trace(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& rows) {
  std::string text = "phase,step,value\n";
  std::size_t step = 0;
  std::string phase;
  for (const auto& [ph, v] : rows) {
    if (ph != phase) {
      phase = ph;
      step = 0;
    }
    text += ph + "," + std::to_string(step++) + "," + format_double(v) + "\n";
  }
  write_text_file(path, text);
}

}  // namespace

int log_level() {
  const char* env = std::getenv("GPRN_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet" || v == "0" || v == "off" || v == "error") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void cmd_fit(const RunConfig& c, std::ostream& out) {
  std::optional<Dataset> test;
  const Dataset raw_train = load_training(c, &test);
  const Transforms tf = fit_transforms(raw_train, c.log_transform, c.normalize);
  const Dataset train = apply_transforms(raw_train, tf);
  const auto dir = ensure_out_dir(c);
  log_info("fitting " + backend_name(c.backend) + " with q=" + std::to_string(c.q) + " on " +
           std::to_string(train.n()) + " inputs, " + std::to_string(train.p()) + " outputs");

  FittedModel model;
  model.q = c.q;
  model.transforms = tf;
  model.input_names = train.input_names;
  model.output_names = train.output_names;
  model.n_mix = c.n_mix;
  model.seed = c.seed;
  model.hyp = c.hyperparams();
  std::vector<std::pair<std::string, double>> trace;
  ordered_json meta;
  meta["command"] = "fit";
  meta["backend"] = backend_name(c.backend);
  meta["q"] = c.q;
  meta["p"] = train.p();
  meta["d"] = train.d();
  meta["n_train"] = train.n();
  meta["n_observed"] = train.observed_count();
  meta["seed"] = c.seed;

  if (c.backend != InferenceBackend::Mcmc) {
    VbFit fit = fit_vb(train, c.q, c.vb, model.hyp);
    for (double v : fit.objective_trace) trace.emplace_back("vb", v);
    for (const auto& w : fit.warnings) log_debug(w);
    log_info("VB objective " + format_double(fit.objective) + " after " + std::to_string(fit.iterations) +
             " iterations (restart " + std::to_string(fit.restart) + ")");
    model.hyp = fit.hyp;
    meta["vb"] = {{"objective", fit.objective}, {"iterations", fit.iterations}, {"restart", fit.restart},
                  {"warnings", fit.warnings}};
    model.backend = Backend::Vb;
    model.vb = std::move(fit);
  }
  if (c.backend != InferenceBackend::Vb) {
    std::optional<Eigen::VectorXd> init;
    if (model.vb) init = pack(NetworkParams{model.vb->posterior.fhat_mean, model.vb->posterior.w_mean});
    McmcChain chain = run_chain(train, model.hyp, c.q, c.mcmc, init);
    for (double v : chain.log_liks) trace.emplace_back("mcmc", v);
    double shrinks = 0.0;
    for (int s : chain.shrink_counts) shrinks += s;
    meta["mcmc"] = {{"n_samples", chain.samples.size()},
                    {"mean_shrinks", chain.shrink_counts.empty() ? 0.0 : shrinks / static_cast<double>(chain.shrink_counts.size())},
                    {"positive_weights", chain.positive_weights}};
    log_info("MCMC retained " + std::to_string(chain.samples.size()) + " samples");
    model.backend = Backend::Mcmc;
    model.mcmc = std::move(chain);
  }
  meta["hyperparameters"] = hyp_json(model.hyp);

  save_model(dir / "model.bin", model);
  write_trace(dir / "trace.csv", trace);

  if (test) {
    save_csv(dir / "test.csv", *test);
    if (model.backend == Backend::Mcmc && model.mcmc->samples.empty()) {
      log_info("empty chain; skipping test-set predictions");
    } else {
      const auto dists = predict_model(model, test->X);
      save_predictions(dir / "predictions.csv", test->X, dists, test->input_names, test->p());
      std::ostringstream sink;
      write_metrics(dir / "metrics.json", load_predictions(dir / "predictions.csv"), *test,
                    column_stats(raw_train.Y, raw_train.mask), c.forecast_use_mean, sink);
      meta["test_metrics"] = ordered_json::parse(sink.str());
    }
  }
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  out << meta.dump(2) << '\n';
}

void cmd_predict(const RunConfig& c, std::ostream& out) {
  const auto model_path = c.model_path.empty() ? c.out_dir / "model.bin" : c.model_path;
  if (c.inputs_path.empty()) throw InputError("config is missing predict.inputs");
  const FittedModel model = load_model(model_path);
  const Inputs Xs = load_inputs(c.inputs_path, static_cast<int>(model.d()));
  const auto dists = predict_model(model, Xs);
  const auto dir = ensure_out_dir(c);
  save_predictions(dir / "predictions.csv", Xs, dists, model.input_names, model.p());
  out << "wrote " << (dir / "predictions.csv").string() << " (" << Xs.rows() << " rows)\n";
}

void cmd_metrics(const RunConfig& c, std::ostream& out) {
  const auto pred_path = c.predictions_path.empty() ? c.out_dir / "predictions.csv" : c.predictions_path;
  if (c.truth_path.empty()) throw InputError("config is missing metrics.truth");
  const PredictionTable pred = load_predictions(pred_path);
  const Dataset truth = load_csv(c.truth_path, static_cast<int>(pred.X.cols()));
  // MSLL's reference model uses training moments when training data is configured.
  TargetStats train = column_stats(truth.Y, truth.mask);
  if (!c.data_path.empty()) {
    const Dataset tr = load_training(c);
    train = column_stats(tr.Y, tr.mask);
  }
  const auto dir = ensure_out_dir(c);
  write_metrics(dir / "metrics.json", pred, truth, train, c.forecast_use_mean, out);
}

void cmd_volatility(const RunConfig& c, std::ostream& out) {
  const auto model_path = c.model_path.empty() ? c.out_dir / "model.bin" : c.model_path;
  if (c.grid_path.empty()) throw InputError("config is missing volatility.grid");
  const FittedModel model = load_model(model_path);
  const Inputs grid = load_inputs(c.grid_path, static_cast<int>(model.d()));
  const Eigen::Index p = model.p();
  if (c.corr_i >= p || c.corr_j >= p) throw InputError("volatility output index out of range");
  const auto covs = noise_covariance_model(model, grid);

  const std::string xh = matrix_header(model.input_names, model.d());
  std::string vol = xh;
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = a; b < p; ++b) vol += ",cov_" + std::to_string(a + 1) + "_" + std::to_string(b + 1);
  vol += "\n";
  for (Eigen::Index m = 0; m < grid.rows(); ++m) {
    for (Eigen::Index k = 0; k < grid.cols(); ++k) vol += (k ? "," : "") + format_double(grid(m, k));
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = a; b < p; ++b) vol += "," + format_double(covs[static_cast<std::size_t>(m)](a, b));
    vol += "\n";
  }

  std::size_t idx = 0;
  const auto field = correlation_field(
      [&](const Eigen::VectorXd&) { return covs[idx++]; }, grid, c.corr_i, c.corr_j);
  std::string corr = xh + ",correlation,zero_variance\n";
  for (const auto& pt : field) {
    for (Eigen::Index k = 0; k < pt.x.size(); ++k) corr += (k ? "," : "") + format_double(pt.x(k));
    corr += "," + format_double(pt.correlation) + "," + (pt.zero_variance ? "1" : "0") + "\n";
  }
  const auto dir = ensure_out_dir(c);
  write_text_file(dir / "volatility.csv", vol);
  write_text_file(dir / "correlation.csv", corr);
  out << "wrote " << (dir / "volatility.csv").string() << " and " << (dir / "correlation.csv").string() << '\n';
}

void cmd_select_q(const RunConfig& c, std::ostream& out) {
  const Dataset raw = load_training(c);
  const Dataset train = apply_transforms(raw, fit_transforms(raw, c.log_transform, c.normalize));
  const ModelSelection sel = model_select_q(train, c.q_candidates, c.vb, c.hyperparams());
  std::string table = "q,objective\n";
  for (const auto& [q, obj] : sel.table) table += std::to_string(q) + "," + format_double(obj) + "\n";
  const auto dir = ensure_out_dir(c);
  write_text_file(dir / "select_q.csv", table);
  ordered_json meta;
  meta["command"] = "select-q";
  meta["best_q"] = sel.best_q;
  meta["seed"] = c.seed;
  ordered_json ards = ordered_json::array();
  for (const auto& f : sel.fits)
    ards.push_back(std::vector<double>(f.hyp.ard.data(), f.hyp.ard.data() + f.hyp.ard.size()));
  meta["ard"] = ards;
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  out << table << "best_q," << sel.best_q << '\n';
}

void cmd_synth(const RunConfig& c, std::ostream& out) {
  const NetworkShape shape{c.synth_n, c.synth_p, c.q, c.synth_d};
  shape.validate();
  const Inputs X = default_grid(c.synth_n, c.synth_d);
  const SyntheticTruth truth = generate(shape, c.hyperparams(), X, c.seed);
  const auto dir = ensure_out_dir(c);
  save_csv(dir / "data.csv", truth.dataset);
  ordered_json side;
  side["seed"] = c.seed;
  side["shape"] = {{"n", shape.n}, {"p", shape.p}, {"q", shape.q}, {"d", shape.d}};
  side["hyperparameters"] = hyp_json(truth.hyp);
  auto rows = [](const Eigen::MatrixXd& M) {
    std::vector<std::vector<double>> r;
    for (Eigen::Index n = 0; n < M.rows(); ++n) {
      r.emplace_back();
      for (Eigen::Index k = 0; k < M.cols(); ++k) r.back().push_back(M(n, k));
    }
    return r;
  };
  side["signal"] = rows(truth.signal);
  side["f"] = rows(truth.f);
  side["w"] = rows(truth.w);
  write_text_file(dir / "truth.json", side.dump(2) + "\n");
  out << "wrote " << (dir / "data.csv").string() << " and " << (dir / "truth.json").string() << '\n';
}

int run_cli(const CliOptions& options, std::ostream& out, std::ostream& err) {
  try {
    RunConfig c = load_config(options.config);
    if (options.seed) c.set_seed(*options.seed);
    if (options.threads) c.set_threads(*options.threads);
    if (options.out) c.out_dir = *options.out;
    const std::string& cmd = options.command;
    if (cmd == "fit") cmd_fit(c, out);
    else if (cmd == "predict") cmd_predict(c, out);
    else if (cmd == "metrics") cmd_metrics(c, out);
    else if (cmd == "volatility") cmd_volatility(c, out);
    else if (cmd == "select-q") cmd_select_q(c, out);
    else if (cmd == "synth") cmd_synth(c, out);
    else throw InputError("unknown command '" + cmd + "'");
    return 0;
  } catch (const std::exception& e) {
    std::string kind = "error";
    if (dynamic_cast<const ParseError*>(&e)) kind = "parse_error";
    else if (dynamic_cast<const InputError*>(&e)) kind = "input_error";
    else if (dynamic_cast<const IoError*>(&e)) kind = "io_error";
    else if (dynamic_cast<const SingularMatrixError*>(&e)) kind = "singular_matrix";
    else if (dynamic_cast<const NumericalError*>(&e)) kind = "numerical_error";
    else if (dynamic_cast<const StepFailure*>(&e)) kind = "step_failure";
    else if (dynamic_cast<const FitFailure*>(&e)) kind = "fit_failure";
    ordered_json j;
    j["error"] = kind;
    j["message"] = e.what();
    j["command"] = options.command;
    err << j.dump() << '\n';
    return 2;
  }
}

}  // namespace gprn
