#include "nodegam/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nodegam/errors.hpp"
#include "nodegam/math_util.hpp"

namespace nodegam {
namespace {

// Output range clamp: probabilities map into +/- 8 sigma.
const double kMinP = norm_cdf(-8.0);
const double kMaxP = 1.0 - kMinP;

double quantile_linear(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

QuantileTransform fit_quantile(std::span<const double> values, std::size_t n_bins, double noise,
                               Rng& rng) {
  if (values.size() < 2)
    throw std::invalid_argument("fit_quantile: needs at least 2 values");
  std::vector<double> noisy(values.begin(), values.end());
  for (double& v : noisy) {
    if (!std::isfinite(v)) throw std::invalid_argument("fit_quantile: non-finite value");
    v += rng.normal(0.0, noise);  // fit-time tie breaking only
  }
  std::sort(noisy.begin(), noisy.end());

  const std::size_t bins = std::max<std::size_t>(2, std::min(n_bins, noisy.size()));
  QuantileTransform qt;
  qt.quantiles.resize(bins);
  for (std::size_t k = 0; k < bins; ++k)
    qt.quantiles[k] =
        quantile_linear(noisy, static_cast<double>(k) / static_cast<double>(bins - 1));
  // Noise keeps them strictly increasing almost surely; enforce monotone.
  for (std::size_t k = 1; k < bins; ++k)
    qt.quantiles[k] = std::max(qt.quantiles[k], qt.quantiles[k - 1]);
  return qt;
}

double QuantileTransform::transform(double v) const {
  const std::vector<double>& q = quantiles;
  const std::size_t b = q.size();
  double p;
  if (v <= q.front()) {
    p = 0.0;
  } else if (v >= q.back()) {
    p = 1.0;
  } else {
    // First reference >= v.
    const std::size_t hi =
        static_cast<std::size_t>(std::lower_bound(q.begin(), q.end(), v) - q.begin());
    const std::size_t lo = hi - 1;
    const double seg = q[hi] - q[lo];
    const double frac = seg > 0.0 ? (v - q[lo]) / seg : 0.0;
    p = (static_cast<double>(lo) + frac) / static_cast<double>(b - 1);
  }
  return norm_ppf(std::clamp(p, kMinP, kMaxP));
}

TargetEncoder fit_target_encoding(std::span<const std::string> categories,
                                  std::span<const double> targets, double smoothing) {
  if (categories.empty()) throw std::invalid_argument("fit_target_encoding: empty column");
  if (categories.size() != targets.size())
    throw std::invalid_argument("fit_target_encoding: length mismatch");
  double global = 0.0;
  for (double y : targets) global += y;
  global /= static_cast<double>(targets.size());

  std::map<std::string, std::pair<double, std::size_t>> stats;  // sum, count
  for (std::size_t r = 0; r < categories.size(); ++r) {
    auto& s = stats[categories[r]];
    s.first += targets[r];
    s.second += 1;
  }
  TargetEncoder enc;
  enc.fallback = global;
  for (const auto& [cat, s] : stats)
    enc.encoding[cat] =
        (s.first + smoothing * global) / (static_cast<double>(s.second) + smoothing);
  return enc;
}

void Pipeline::fit(const RawTable& table, const Schema& schema,
                   std::span<const double> targets, Rng& rng, std::size_t n_bins,
                   double noise, double smoothing) {
  if (table.num_rows() == 0) throw schema_error("pipeline: empty training table");
  if (targets.size() != table.num_rows())
    throw std::invalid_argument("pipeline: target length mismatch");

  schema_ = schema;
  target_name_.clear();
  for (const Schema::Entry& e : schema.columns)
    if (e.kind == ColumnKind::target) target_name_ = e.name;
  features_.clear();

  for (const Schema::Entry& entry : schema.columns) {
    if (entry.kind == ColumnKind::target) continue;
    const auto col = table.column_index(entry.name);
    if (!col) throw schema_error("pipeline: column '" + entry.name + "' missing from data");

    Feature feat;
    feat.name = entry.name;
    feat.categorical = entry.kind == ColumnKind::categorical;
    std::vector<double> encoded(table.num_rows());

    if (feat.categorical) {
      std::vector<std::string> cats(table.num_rows());
      for (std::size_t r = 0; r < table.num_rows(); ++r) cats[r] = table.rows[r][*col];
      feat.encoder = fit_target_encoding(cats, targets, smoothing);
      for (std::size_t r = 0; r < table.num_rows(); ++r)
        encoded[r] = feat.encoder.encode(cats[r]);
      feat.impute_mean = feat.encoder.fallback;
    } else {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t r = 0; r < table.num_rows(); ++r) {
        const std::string& cell = table.rows[r][*col];
        if (!is_missing_cell(cell)) {
          encoded[r] = parse_numeric_cell(cell, entry.name);
          sum += encoded[r];
          ++count;
        } else {
          encoded[r] = std::numeric_limits<double>::quiet_NaN();
        }
      }
      feat.impute_mean = count > 0 ? sum / static_cast<double>(count) : 0.0;
      for (double& v : encoded)
        if (std::isnan(v)) v = feat.impute_mean;
    }

    feat.quantile = fit_quantile(encoded, n_bins, noise, rng);
    features_.push_back(std::move(feat));
  }
  if (features_.empty()) throw schema_error("pipeline: schema declares no features");
  fitted_ = true;
}

Matrix Pipeline::encode(const RawTable& table) const {
  if (!fitted_) throw invalid_state_error("pipeline: not fitted");
  for (const std::string& col : table.header)
    if (!schema_.find(col))
      throw schema_error("pipeline: unknown column '" + col + "' in data");
  Matrix out(table.num_rows(), features_.size());
  for (std::size_t f = 0; f < features_.size(); ++f) {
    const Feature& feat = features_[f];
    const auto col = table.column_index(feat.name);
    if (!col) throw schema_error("pipeline: column '" + feat.name + "' missing from data");
    for (std::size_t r = 0; r < table.num_rows(); ++r) {
      const std::string& cell = table.rows[r][*col];
      if (feat.categorical) {
        // Missing categoricals are just another category; unseen ones fall
        // back to the global target mean.
        out(r, f) = feat.encoder.encode(cell);
      } else {
        out(r, f) =
            is_missing_cell(cell) ? feat.impute_mean : parse_numeric_cell(cell, feat.name);
      }
    }
  }
  return out;
}

Matrix Pipeline::transform_encoded(const Matrix& encoded) const {
  if (!fitted_) throw invalid_state_error("pipeline: not fitted");
  if (encoded.cols() != features_.size())
    throw std::invalid_argument("pipeline: encoded width mismatch");
  Matrix out(encoded.rows(), encoded.cols());
  for (std::size_t f = 0; f < features_.size(); ++f)
    for (std::size_t r = 0; r < encoded.rows(); ++r)
      out(r, f) = features_[f].quantile.transform(encoded(r, f));
  return out;
}

Matrix Pipeline::transform(const RawTable& table) const {
  return transform_encoded(encode(table));
}

bool Pipeline::has_target_column(const RawTable& table) const {
  return !target_name_.empty() && table.column_index(target_name_).has_value();
}

std::vector<double> extract_targets(const RawTable& table, const Schema& schema) {
  const std::string name = schema.target_name();
  const auto col = table.column_index(name);
  if (!col) throw schema_error("target column '" + name + "' missing from data");
  std::vector<double> y(table.num_rows());
  for (std::size_t r = 0; r < table.num_rows(); ++r) {
    const std::string& cell = table.rows[r][*col];
    if (is_missing_cell(cell))
      throw schema_error("target column '" + name + "': missing value at row " +
                         std::to_string(r + 2));
    y[r] = parse_numeric_cell(cell, name);
  }
  return y;
}

std::vector<double> Pipeline::extract_targets(const RawTable& table) const {
  if (target_name_.empty()) throw schema_error("pipeline: schema has no target column");
  return nodegam::extract_targets(table, schema_);
}

}  // namespace nodegam
