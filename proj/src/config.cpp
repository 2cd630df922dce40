#include "gprn/config.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "gprn/errors.hpp"

namespace gprn {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

struct Value {
  std::string key;
  std::string text;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("config key '" + key + "': " + what + ", got '" + text + "'");
  }
  double real() const {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    fail("expected a number");
  }
  long long integer() const {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    fail("expected an integer");
  }
  long long count(long long min) const {
    const long long v = integer();
    if (v < min) fail("expected an integer >= " + std::to_string(min));
    return v;
  }
  double positive() const {
    const double v = real();
    if (!(v > 0.0)) fail("expected a positive number");
    return v;
  }
  bool flag() const {
    const std::string t = lower(text);
    if (t == "true" || t == "yes" || t == "1" || t == "on") return true;
    if (t == "false" || t == "no" || t == "0" || t == "off") return false;
    fail("expected true or false");
  }
  std::vector<long long> integers() const {
    std::vector<long long> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      out.push_back(Value{key, item}.integer());
    }
    if (out.empty()) fail("expected a comma-separated list of integers");
    return out;
  }
  InverseGamma inverse_gamma() const {
    const auto comma = text.find(',');
    if (comma == std::string::npos) fail("expected 'shape,rate'");
    return {Value{key, text.substr(0, comma)}.positive(), Value{key, text.substr(comma + 1)}.positive()};
  }
  KernelSpec kernel() const {
    try {
      return parse_kernel(text);
    } catch (const ParseError& e) {
      throw ParseError("config key '" + key + "': " + e.what());
    }
  }
};

}  // namespace

Hyperparams RunConfig::hyperparams() const {
  Hyperparams h;
  h.theta_f = node_kernel;
  h.theta_w = weight_kernel;
  h.sigma_f = sigma_f;
  h.sigma_y = sigma_y;
  h.ard = Eigen::VectorXd::Constant(q, ard_init);
  h.priors = priors;
  return h;
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  vb.seed = s;
  mcmc.seed = s;
  split.seed = s;
}

void RunConfig::set_threads(int t) {
  if (t < 1) throw InputError("threads must be >= 1");
  threads = t;
  vb.threads = t;
}

std::string backend_name(InferenceBackend b) {
  switch (b) {
    case InferenceBackend::Vb: return "vb";
    case InferenceBackend::Mcmc: return "mcmc";
    case InferenceBackend::VbThenMcmc: return "vb-then-mcmc";
  }
  return "vb";
}

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig c;
  auto path = [&](const Value& v) {
    std::filesystem::path p(v.text);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  bool split_seed_set = false;

  using Setter = std::function<void(const Value&)>;
  const std::map<std::string, Setter> setters = {
      {"data.path", [&](const Value& v) { c.data_path = path(v); }},
      {"data.n_input_cols", [&](const Value& v) { c.n_input_cols = static_cast<int>(v.count(1)); }},
      {"data.log_transform", [&](const Value& v) { c.log_transform = v.flag(); }},
      {"data.normalize", [&](const Value& v) { c.normalize = v.flag(); }},

      {"split.mode", [&](const Value& v) {
         const std::string m = lower(v.text);
         if (m == "none") c.has_split = false;
         else if (m == "fraction") { c.has_split = true; c.split.mode = SplitSpec::Mode::HoldoutFraction; }
         else if (m == "indices") { c.has_split = true; c.split.mode = SplitSpec::Mode::ExplicitIndices; }
         else if (m == "region") { c.has_split = true; c.split.mode = SplitSpec::Mode::HoldoutOutputRegion; }
         else v.fail("expected none, fraction, indices or region");
       }},
      {"split.fraction", [&](const Value& v) {
         c.split.holdout_fraction = v.real();
         if (!(c.split.holdout_fraction > 0.0 && c.split.holdout_fraction < 1.0)) v.fail("expected a value in (0, 1)");
       }},
      {"split.indices", [&](const Value& v) {
         c.split.indices.clear();
         for (long long i : v.integers()) {
           if (i < 0) v.fail("indices must be >= 0");
           c.split.indices.push_back(static_cast<Eigen::Index>(i));
         }
       }},
      {"split.target_output", [&](const Value& v) { c.split.target_output = v.count(0); }},
      {"split.seed", [&](const Value& v) { c.split.seed = static_cast<std::uint64_t>(v.count(0)); split_seed_set = true; }},

      {"model.q", [&](const Value& v) { c.q = v.count(1); }},
      {"model.node_kernel", [&](const Value& v) { c.node_kernel = v.kernel(); }},
      {"model.weight_kernel", [&](const Value& v) { c.weight_kernel = v.kernel(); }},
      {"model.sigma_f", [&](const Value& v) {
         c.sigma_f = v.real();
         if (!(c.sigma_f >= 0.0)) v.fail("expected a nonnegative number");
       }},
      {"model.sigma_y", [&](const Value& v) { c.sigma_y = v.positive(); }},
      {"model.ard_init", [&](const Value& v) { c.ard_init = v.positive(); }},
      {"model.prior_sigma_f2", [&](const Value& v) { c.priors.sigma_f2 = v.inverse_gamma(); }},
      {"model.prior_sigma_y2", [&](const Value& v) { c.priors.sigma_y2 = v.inverse_gamma(); }},
      {"model.prior_ard", [&](const Value& v) { c.priors.ard = v.inverse_gamma(); }},

      {"inference.backend", [&](const Value& v) {
         const std::string b = lower(v.text);
         if (b == "vb") c.backend = InferenceBackend::Vb;
         else if (b == "mcmc") c.backend = InferenceBackend::Mcmc;
         else if (b == "vb-then-mcmc") c.backend = InferenceBackend::VbThenMcmc;
         else v.fail("expected vb, mcmc or vb-then-mcmc");
       }},
      {"inference.seed", [&](const Value& v) { c.set_seed(static_cast<std::uint64_t>(v.count(0))); }},
      {"inference.threads", [&](const Value& v) { c.set_threads(static_cast<int>(v.count(1))); }},

      {"vb.max_em_iters", [&](const Value& v) { c.vb.max_em_iters = static_cast<int>(v.count(1)); }},
      {"vb.estep_inner_iters", [&](const Value& v) { c.vb.estep_inner_iters = static_cast<int>(v.count(1)); }},
      {"vb.objective_tol", [&](const Value& v) { c.vb.objective_tol = v.positive(); }},
      {"vb.mstep_iters", [&](const Value& v) { c.vb.mstep_iters = static_cast<int>(v.count(0)); }},
      {"vb.mstep_max_linesearch", [&](const Value& v) { c.vb.mstep_max_linesearch = static_cast<int>(v.count(1)); }},
      {"vb.n_restarts", [&](const Value& v) { c.vb.n_restarts = static_cast<int>(v.count(1)); }},
      {"vb.init_std", [&](const Value& v) { c.vb.init_std = v.positive(); }},
      {"vb.ard", [&](const Value& v) { c.vb.ard = v.flag(); }},
      {"vb.learn_theta_f", [&](const Value& v) { c.vb.learn_theta_f = v.flag(); }},
      {"vb.learn_theta_w", [&](const Value& v) { c.vb.learn_theta_w = v.flag(); }},

      {"mcmc.n_burnin", [&](const Value& v) { c.mcmc.n_burnin = static_cast<int>(v.count(0)); }},
      {"mcmc.n_samples", [&](const Value& v) { c.mcmc.n_samples = static_cast<int>(v.count(0)); }},
      {"mcmc.thin", [&](const Value& v) { c.mcmc.thin = static_cast<int>(v.count(1)); }},
      {"mcmc.positive_weights", [&](const Value& v) { c.mcmc.positive_weights = v.flag(); }},
      {"mcmc.shrink_cap", [&](const Value& v) { c.mcmc.shrink_cap = static_cast<int>(v.count(1)); }},
      {"mcmc.n_mix", [&](const Value& v) { c.n_mix = static_cast<int>(v.count(1)); }},

      {"predict.model", [&](const Value& v) { c.model_path = path(v); }},
      {"predict.inputs", [&](const Value& v) { c.inputs_path = path(v); }},
      {"metrics.predictions", [&](const Value& v) { c.predictions_path = path(v); }},
      {"metrics.truth", [&](const Value& v) { c.truth_path = path(v); }},
      {"metrics.forecast_use_mean", [&](const Value& v) { c.forecast_use_mean = v.flag(); }},
      {"volatility.model", [&](const Value& v) { c.model_path = path(v); }},
      {"volatility.grid", [&](const Value& v) { c.grid_path = path(v); }},
      {"volatility.output_i", [&](const Value& v) { c.corr_i = v.count(0); }},
      {"volatility.output_j", [&](const Value& v) { c.corr_j = v.count(0); }},

      {"select_q.candidates", [&](const Value& v) {
         c.q_candidates.clear();
         for (long long q : v.integers()) {
           if (q < 1) v.fail("candidates must be >= 1");
           c.q_candidates.push_back(static_cast<Eigen::Index>(q));
         }
       }},

      {"synth.n", [&](const Value& v) { c.synth_n = v.count(1); }},
      {"synth.p", [&](const Value& v) { c.synth_p = v.count(1); }},
      {"synth.d", [&](const Value& v) { c.synth_d = v.count(1); }},

      {"output.dir", [&](const Value& v) { c.out_dir = path(v); }},
  };

  std::vector<CLI::ConfigItem> items;
  try {
    std::istringstream in(text);
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ParseError(std::string("malformed config: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    std::string key;
    for (const auto& p : item.parents)
      if (p != "default") key += lower(p) + ".";
    key += lower(item.name);
    std::string joined;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) joined += (k ? "," : "") + item.inputs[k];
    entries.emplace_back(key, joined);
  }
  for (const auto& [key, value] : entries) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ParseError("unknown config key '" + key + "'");
    it->second(Value{key, value});
  }
  if (!split_seed_set) c.split.seed = c.seed;
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text_file(path), path.parent_path());
}

}  // namespace gprn
