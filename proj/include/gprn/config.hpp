#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gprn/data_io.hpp"
#include "gprn/kernels.hpp"
#include "gprn/mcmc.hpp"
#include "gprn/model.hpp"
#include "gprn/vb.hpp"

namespace gprn {

enum class InferenceBackend { Vb, Mcmc, VbThenMcmc };

/// Contents of a run configuration file. Relative paths are resolved
/// against the directory holding the file.
struct RunConfig {
  // [data]
  std::filesystem::path data_path;
  int n_input_cols = 1;
  bool log_transform = false;
  bool normalize = true;

  // [split]
  bool has_split = false;
  SplitSpec split;

  // [model]
  Eigen::Index q = 1;
  KernelSpec node_kernel = KernelSpec::squared_exponential(1.0, 1.0);
  KernelSpec weight_kernel = KernelSpec::squared_exponential(1.0, 1.0);
  double sigma_f = 0.1;
  double sigma_y = 0.1;
  double ard_init = 1.0;
  InverseGammaPriors priors;

  // [inference]
  InferenceBackend backend = InferenceBackend::Vb;
  std::uint64_t seed = 0;
  int threads = 1;
  VbConfig vb;
  McmcConfig mcmc;
  int n_mix = 1;

  // [predict], [metrics], [volatility]
  std::filesystem::path model_path;
  std::filesystem::path inputs_path;
  std::filesystem::path predictions_path;
  std::filesystem::path truth_path;
  std::filesystem::path grid_path;
  bool forecast_use_mean = false;  ///< centre forecast scores on predicted means instead of zero
  Eigen::Index corr_i = 0;
  Eigen::Index corr_j = 1;

  // [select_q]
  std::vector<Eigen::Index> q_candidates{1, 2, 3};

  // [synth]
  Eigen::Index synth_n = 50;
  Eigen::Index synth_p = 2;
  Eigen::Index synth_d = 1;

  // [output]
  std::filesystem::path out_dir = "out";

  Hyperparams hyperparams() const;
  /// Propagates the seed and thread count into the backend settings.
  void set_seed(std::uint64_t s);
  void set_threads(int t);
};

/// Parses INI text: `[section]` headers and `key = value` lines, `;` or `#`
/// comments. Unknown sections or keys are rejected.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

std::string backend_name(InferenceBackend b);

}  // namespace gprn
