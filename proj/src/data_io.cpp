#include "gprn/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gprn/errors.hpp"
#include "gprn/prediction.hpp"

namespace gprn {
namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing(const std::string& cell) {
  if (cell.empty()) return true;
  std::string lower;
  for (char c : cell) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return lower == "nan";
}

double parse_number(const std::string& cell, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || !std::isfinite(v))
    throw ParseError("non-numeric cell '" + cell + "'", line);
  return v;
}

}  // namespace

void Dataset::validate() const {
  if (X.rows() < 1) throw InputError("dataset has no rows");
  if (Y.rows() != X.rows() || mask.rows() != X.rows() || mask.cols() != Y.cols())
    throw InputError("dataset dimensions disagree");
  if (Y.cols() < 1) throw InputError("dataset has no outputs");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Dataset parse_csv(const std::string& text, int n_input_cols) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty() && trim(line) != "\r") {
      header = split_line(line);
      break;
    }
  }
  if (header.empty()) throw ParseError("CSV has no header row", line_no);
  const auto n_cols = static_cast<int>(header.size());
  if (n_input_cols < 1 || n_input_cols >= n_cols)
    throw ParseError("n_input_cols=" + std::to_string(n_input_cols) + " must be in [1, " +
                         std::to_string(n_cols - 1) + "]",
                     line_no);

  std::vector<std::vector<double>> xs, ys;
  std::vector<std::vector<bool>> obs;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line) == "\r") continue;
    const auto cells = split_line(line);
    if (static_cast<int>(cells.size()) != n_cols)
      throw ParseError("row has " + std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(n_cols),
                       line_no);
    std::vector<double> x, y;
    std::vector<bool> o;
    for (int c = 0; c < n_cols; ++c) {
      const std::string cell = trim(cells[static_cast<std::size_t>(c)]);
      if (c < n_input_cols) {
        if (is_missing(cell)) throw ParseError("input cell is missing", line_no);
        x.push_back(parse_number(cell, line_no));
      } else if (is_missing(cell)) {
        y.push_back(kMissing);
        o.push_back(false);
      } else {
        y.push_back(parse_number(cell, line_no));
        o.push_back(true);
      }
    }
    xs.push_back(std::move(x));
    ys.push_back(std::move(y));
    obs.push_back(std::move(o));
  }
  if (xs.empty()) throw ParseError("CSV has no data rows", line_no);

  Dataset d;
  const auto n = static_cast<Eigen::Index>(xs.size());
  const Eigen::Index p = n_cols - n_input_cols;
  d.X.resize(n, n_input_cols);
  d.Y.resize(n, p);
  d.mask.resize(n, p);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto k = static_cast<std::size_t>(r);
    for (Eigen::Index c = 0; c < n_input_cols; ++c) d.X(r, c) = xs[k][static_cast<std::size_t>(c)];
    for (Eigen::Index c = 0; c < p; ++c) {
      d.Y(r, c) = ys[k][static_cast<std::size_t>(c)];
      d.mask(r, c) = obs[k][static_cast<std::size_t>(c)];
    }
  }
  for (int c = 0; c < n_cols; ++c)
    (c < n_input_cols ? d.input_names : d.output_names).push_back(trim(header[static_cast<std::size_t>(c)]));
  return d;
}

Dataset load_csv(const std::filesystem::path& path, int n_input_cols) {
  try {
    return parse_csv(read_text_file(path), n_input_cols);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Inputs parse_inputs(const std::string& text, int d) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line) == "\r") continue;
    const auto cells = split_line(line);
    if (static_cast<int>(cells.size()) < d)
      throw ParseError("row has " + std::to_string(cells.size()) + " cells, need " + std::to_string(d) + " inputs",
                       line_no);
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<double> x;
    for (int c = 0; c < d; ++c) {
      const std::string cell = trim(cells[static_cast<std::size_t>(c)]);
      if (is_missing(cell)) throw ParseError("input cell is missing", line_no);
      x.push_back(parse_number(cell, line_no));
    }
    rows.push_back(std::move(x));
  }
  if (rows.empty()) throw ParseError("input file has no data rows", line_no);
  Inputs X(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < d; ++c) X(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return X;
}

Inputs load_inputs(const std::filesystem::path& path, int d) {
  try {
    return parse_inputs(read_text_file(path), d);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_csv(const Dataset& data) {
  std::string out;
  auto name = [](const std::vector<std::string>& names, Eigen::Index k, const char* prefix) {
    return k < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(k)]
                                                       : prefix + std::to_string(k + 1);
  };
  for (Eigen::Index c = 0; c < data.d(); ++c) {
    if (c) out += ',';
    out += name(data.input_names, c, "x");
  }
  for (Eigen::Index c = 0; c < data.p(); ++c) out += ',' + name(data.output_names, c, "y");
  out += '\n';
  for (Eigen::Index r = 0; r < data.n(); ++r) {
    for (Eigen::Index c = 0; c < data.d(); ++c) {
      if (c) out += ',';
      out += format_double(data.X(r, c));
    }
    for (Eigen::Index c = 0; c < data.p(); ++c)
      out += ',' + (data.mask(r, c) ? format_double(data.Y(r, c)) : std::string());
    out += '\n';
  }
  return out;
}

void save_csv(const std::filesystem::path& path, const Dataset& data) {
  write_text_file(path, format_csv(data));
}

Dataset select_rows(const Dataset& data, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.X.resize(m, data.d());
  out.Y.resize(m, data.p());
  out.mask.resize(m, data.p());
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index r = rows[static_cast<std::size_t>(k)];
    out.X.row(k) = data.X.row(r);
    out.Y.row(k) = data.Y.row(r);
    out.mask.row(k) = data.mask.row(r);
  }
  out.input_names = data.input_names;
  out.output_names = data.output_names;
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  const Eigen::Index n = data.n();
  std::vector<Eigen::Index> test;
  switch (spec.mode) {
    case SplitSpec::Mode::HoldoutFraction: {
      if (!(spec.holdout_fraction >= 0.0 && spec.holdout_fraction <= 1.0))
        throw InputError("holdout_fraction must lie in [0, 1]");
      std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      Rng rng = make_rng(spec.seed, 0x5e17);
      std::shuffle(order.begin(), order.end(), rng);
      const auto n_test = static_cast<std::size_t>(std::llround(spec.holdout_fraction * static_cast<double>(n)));
      test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
      std::sort(test.begin(), test.end());
      break;
    }
    case SplitSpec::Mode::ExplicitIndices:
    case SplitSpec::Mode::HoldoutOutputRegion: {
      std::set<Eigen::Index> uniq(spec.indices.begin(), spec.indices.end());
      for (Eigen::Index r : uniq)
        if (r < 0 || r >= n) throw InputError("split index " + std::to_string(r) + " out of range");
      test.assign(uniq.begin(), uniq.end());
      break;
    }
  }
  if (test.empty()) throw InputError("split produced an empty test set");

  if (spec.mode == SplitSpec::Mode::HoldoutOutputRegion) {
    if (spec.target_output < 0 || spec.target_output >= data.p())
      throw InputError("split target output out of range");
    Dataset train = data;
    for (Eigen::Index r : test) {
      train.mask(r, spec.target_output) = false;
      train.Y(r, spec.target_output) = kMissing;
    }
    if (!train.mask.col(spec.target_output).any())
      throw InputError("split leaves no training observations of the target output");
    return {std::move(train), select_rows(data, test)};
  }

  std::vector<Eigen::Index> train_rows;
  std::set<Eigen::Index> in_test(test.begin(), test.end());
  for (Eigen::Index r = 0; r < n; ++r)
    if (!in_test.count(r)) train_rows.push_back(r);
  if (train_rows.empty()) throw InputError("split produced an empty training set");
  return {select_rows(data, train_rows), select_rows(data, test)};
}

Transforms fit_transforms(const Dataset& data, bool log, bool normalize) {
  Transforms t;
  for (Eigen::Index c = 0; c < data.p(); ++c) {
    OutputTransform o;
    o.log = log;
    if (normalize) {
      double sum = 0.0, sq = 0.0;
      Eigen::Index count = 0;
      for (Eigen::Index r = 0; r < data.n(); ++r) {
        if (!data.mask(r, c)) continue;
        double v = data.Y(r, c);
        if (log) {
          if (!(v > 0.0)) throw InputError("log transform needs positive outputs");
          v = std::log(v);
        }
        sum += v;
        sq += v * v;
        ++count;
      }
      if (count > 0) {
        o.mean = sum / static_cast<double>(count);
        const double var = sq / static_cast<double>(count) - o.mean * o.mean;
        o.scale = var > 1e-300 ? std::sqrt(var) : 1.0;
      }
    }
    t.outputs.push_back(o);
  }
  return t;
}

Dataset apply_transforms(const Dataset& data, const Transforms& t) {
  if (t.empty()) return data;
  if (static_cast<Eigen::Index>(t.outputs.size()) != data.p())
    throw InputError("transform count does not match outputs");
  Dataset out = data;
  for (Eigen::Index c = 0; c < data.p(); ++c) {
    const auto& o = t.outputs[static_cast<std::size_t>(c)];
    for (Eigen::Index r = 0; r < data.n(); ++r) {
      if (!data.mask(r, c)) continue;
      double v = data.Y(r, c);
      if (o.log) {
        if (!(v > 0.0)) throw InputError("log transform needs positive outputs");
        v = std::log(v);
      }
      out.Y(r, c) = (v - o.mean) / o.scale;
    }
  }
  return out;
}

PredictiveDistribution invert_transforms(const PredictiveDistribution& dist, const Transforms& t) {
  if (t.empty()) return dist;
  const Eigen::Index p = dist.dim();
  if (static_cast<Eigen::Index>(t.outputs.size()) != p)
    throw InputError("transform count does not match outputs");
  Eigen::VectorXd scale(p), shift(p);
  bool any_log = false;
  for (Eigen::Index c = 0; c < p; ++c) {
    scale(c) = t.outputs[static_cast<std::size_t>(c)].scale;
    shift(c) = t.outputs[static_cast<std::size_t>(c)].mean;
    any_log = any_log || t.outputs[static_cast<std::size_t>(c)].log;
  }
  auto affine = [&](const Eigen::VectorXd& m, const Eigen::MatrixXd& C) {
    Eigen::VectorXd m2 = (m.array() * scale.array() + shift.array()).matrix();
    Eigen::MatrixXd C2 = scale.asDiagonal() * C * scale.asDiagonal();
    return GaussianComponent{std::move(m2), 0.5 * (C2 + C2.transpose())};
  };

  PredictiveDistribution out;
  if (dist.kind == PredictiveKind::GaussianMixture) {
    std::vector<GaussianComponent> comps;
    for (const auto& c : dist.components) comps.push_back(affine(c.mean, c.covariance));
    out = gaussian_mixture(std::move(comps));
  } else {
    auto g = affine(dist.mean, dist.covariance);
    out = gaussian_moments(std::move(g.mean), std::move(g.covariance));
  }
  if (!any_log) return out;

  // Log-normal moments for the log-transformed coordinates.
  Eigen::VectorXd m = out.mean;
  Eigen::MatrixXd C = out.covariance;
  Eigen::VectorXd mean(p);
  for (Eigen::Index a = 0; a < p; ++a)
    mean(a) = t.outputs[static_cast<std::size_t>(a)].log ? std::exp(m(a) + 0.5 * C(a, a)) : m(a);
  Eigen::MatrixXd cov(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      const bool la = t.outputs[static_cast<std::size_t>(a)].log;
      const bool lb = t.outputs[static_cast<std::size_t>(b)].log;
      if (la && lb)
        cov(a, b) = mean(a) * mean(b) * std::expm1(C(a, b));
      else if (la)
        cov(a, b) = mean(a) * C(a, b);
      else if (lb)
        cov(a, b) = mean(b) * C(a, b);
      else
        cov(a, b) = C(a, b);
    }
  return gaussian_moments(std::move(mean), 0.5 * (cov + cov.transpose()));
}

std::string format_predictions(const Inputs& x_stars,
                               const std::vector<PredictiveDistribution>& dists,
                               const std::vector<std::string>& input_names, Eigen::Index p_hint) {
  if (static_cast<Eigen::Index>(dists.size()) != x_stars.rows())
    throw InputError("predictions and inputs are not aligned");
  const Eigen::Index p = dists.empty() ? p_hint : dists.front().dim();
  std::string out;
  for (Eigen::Index c = 0; c < x_stars.cols(); ++c) {
    if (c) out += ',';
    out += c < static_cast<Eigen::Index>(input_names.size())
               ? input_names[static_cast<std::size_t>(c)]
               : "x" + std::to_string(c + 1);
  }
  for (Eigen::Index i = 0; i < p; ++i) out += ",mean_" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < p; ++i) out += ",var_" + std::to_string(i + 1);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = i + 1; j < p; ++j)
      out += ",cov_" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t r = 0; r < dists.size(); ++r) {
    const auto& d = dists[r];
    if (d.dim() != p) throw InputError("predictions differ in output dimension");
    const auto row = static_cast<Eigen::Index>(r);
    for (Eigen::Index c = 0; c < x_stars.cols(); ++c) {
      if (c) out += ',';
      out += format_double(x_stars(row, c));
    }
    for (Eigen::Index i = 0; i < p; ++i) out += ',' + format_double(d.mean(i));
    for (Eigen::Index i = 0; i < p; ++i) out += ',' + format_double(d.covariance(i, i));
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = i + 1; j < p; ++j) out += ',' + format_double(d.covariance(i, j));
    out += '\n';
  }
  return out;
}

void save_predictions(const std::filesystem::path& path, const Inputs& x_stars,
                      const std::vector<PredictiveDistribution>& dists,
                      const std::vector<std::string>& input_names, Eigen::Index p_hint) {
  write_text_file(path, format_predictions(x_stars, dists, input_names, p_hint));
}

PredictionTable load_predictions(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty predictions file");
  const auto header = split_line(line);
  Eigen::Index d = 0, p = 0;
  for (const auto& h : header) {
    if (h.rfind("mean_", 0) == 0)
      ++p;
    else if (h.rfind("var_", 0) != 0 && h.rfind("cov_", 0) != 0)
      ++d;
  }
  const auto expected = static_cast<std::size_t>(d + 2 * p + p * (p - 1) / 2);
  if (header.size() != expected) throw ParseError(path.string() + ": malformed predictions header", 1);

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != expected) throw ParseError(path.string() + ": ragged predictions row", line_no);
    std::vector<double> v;
    for (const auto& c : cells) v.push_back(parse_number(trim(c), line_no));
    rows.push_back(std::move(v));
  }
  PredictionTable t;
  const auto m = static_cast<Eigen::Index>(rows.size());
  t.X.resize(m, d);
  t.mean.resize(m, p);
  t.var.resize(m, p);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto& v = rows[static_cast<std::size_t>(r)];
    std::size_t k = 0;
    for (Eigen::Index c = 0; c < d; ++c) t.X(r, c) = v[k++];
    for (Eigen::Index i = 0; i < p; ++i) t.mean(r, i) = v[k++];
    for (Eigen::Index i = 0; i < p; ++i) t.var(r, i) = v[k++];
    Eigen::MatrixXd C = t.var.row(r).asDiagonal();
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = i + 1; j < p; ++j) C(i, j) = C(j, i) = v[k++];
    t.cov.push_back(std::move(C));
  }
  return t;
}

}  // namespace gprn
