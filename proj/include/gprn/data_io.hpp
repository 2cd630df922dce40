#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gprn/model.hpp"

namespace gprn {

/// Value stored in Y for unobserved entries. Numerics never read it.
inline const double kMissing = std::numeric_limits<double>::quiet_NaN();

struct Dataset {
  Inputs X;            ///< N x d
  Eigen::MatrixXd Y;   ///< N x p
  Mask mask;           ///< N x p, true = observed
  std::vector<std::string> input_names;
  std::vector<std::string> output_names;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index d() const { return X.cols(); }
  Eigen::Index p() const { return Y.cols(); }
  Eigen::Index observed_count() const { return mask.count(); }
  void validate() const;
};

/// First `n_input_cols` columns are inputs, the rest outputs. Empty cells and
/// case-insensitive `nan` are missing.
Dataset load_csv(const std::filesystem::path& path, int n_input_cols);
Dataset parse_csv(const std::string& text, int n_input_cols);
/// Header row plus rows whose first `d` cells are inputs; extra columns are ignored.
Inputs parse_inputs(const std::string& text, int d);
Inputs load_inputs(const std::filesystem::path& path, int d);

/// Writes with 17 significant digits; missing entries become empty cells.
void save_csv(const std::filesystem::path& path, const Dataset& data);
std::string format_csv(const Dataset& data);

/// Shortest decimal text that round-trips a double bit-exactly (17 sig. digits).
std::string format_double(double v);

struct SplitSpec {
  enum class Mode { HoldoutFraction, ExplicitIndices, HoldoutOutputRegion };
  Mode mode = Mode::HoldoutFraction;
  double holdout_fraction = 0.2;
  std::vector<Eigen::Index> indices;  ///< explicit test rows, or held-out rows of the region mode
  Eigen::Index target_output = 0;     ///< region mode only
  std::uint64_t seed = 0;
};

/// In region mode the training set keeps every row and masks only the
/// target output on the held-out rows; the test set holds those rows.
std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec);

Dataset select_rows(const Dataset& data, const std::vector<Eigen::Index>& rows);

/// Per-output optional log transform followed by standardization.
struct OutputTransform {
  bool log = false;
  double mean = 0.0;
  double scale = 1.0;
};

struct Transforms {
  std::vector<OutputTransform> outputs;
  bool empty() const { return outputs.empty(); }
};

/// Statistics are taken over observed entries only.
Transforms fit_transforms(const Dataset& data, bool log, bool normalize);
Dataset apply_transforms(const Dataset& data, const Transforms& t);

struct PredictiveDistribution;

/// Maps transformed-space moments back to data space (affine for the
/// standardization, log-normal moment matching for the log transform).
PredictiveDistribution invert_transforms(const PredictiveDistribution& dist, const Transforms& t);

/// Columns: inputs, mean_i, var_i, then cov_i_j for i < j (1-based).
/// `p_hint` fixes the output count when `dists` is empty.
void save_predictions(const std::filesystem::path& path, const Inputs& x_stars,
                      const std::vector<PredictiveDistribution>& dists,
                      const std::vector<std::string>& input_names = {},
                      Eigen::Index p_hint = 0);
std::string format_predictions(const Inputs& x_stars,
                               const std::vector<PredictiveDistribution>& dists,
                               const std::vector<std::string>& input_names = {},
                               Eigen::Index p_hint = 0);

struct PredictionTable {
  Inputs X;
  Eigen::MatrixXd mean;
  Eigen::MatrixXd var;
  std::vector<Eigen::MatrixXd> cov;  ///< full p x p per row
};

PredictionTable load_predictions(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace gprn
