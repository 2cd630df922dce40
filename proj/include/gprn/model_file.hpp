#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gprn/data_io.hpp"
#include "gprn/mcmc.hpp"
#include "gprn/vb.hpp"

namespace gprn {

enum class Backend { Vb, Mcmc };

/// Everything `predict` and `volatility` need from a fit.
struct FittedModel {
  Backend backend = Backend::Vb;
  Eigen::Index q = 1;
  Hyperparams hyp;
  std::optional<VbFit> vb;
  std::optional<McmcChain> mcmc;
  Transforms transforms;
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;
  int n_mix = 1;
  std::uint64_t seed = 0;

  Eigen::Index p() const { return static_cast<Eigen::Index>(output_names.size()); }
  Eigen::Index d() const { return static_cast<Eigen::Index>(input_names.size()); }
};

/// Binary (CBOR) encoding; doubles round-trip exactly.
std::vector<std::uint8_t> serialize_model(const FittedModel& model);
FittedModel deserialize_model(const std::vector<std::uint8_t>& bytes);
void save_model(const std::filesystem::path& path, const FittedModel& model);
FittedModel load_model(const std::filesystem::path& path);

/// Predictive distributions at the rows of Xs, in data units.
std::vector<PredictiveDistribution> predict_model(const FittedModel& model, const Inputs& Xs);

/// Noise covariance at the rows of Xs. Standardization is undone; outputs
/// fitted on the log scale stay on the log scale.
std::vector<Eigen::MatrixXd> noise_covariance_model(const FittedModel& model, const Inputs& Xs);

}  // namespace gprn
