#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nodegam/dataset.hpp"
#include "nodegam/matrix.hpp"
#include "nodegam/rng.hpp"

namespace nodegam {

/// Per-feature monotone map to a standard Gaussian: empirical quantiles at
/// equally spaced probabilities (up to n_bins reference points), linear
/// interpolation between them, clamped ends. Small Gaussian noise is added
/// while fitting only, to break ties; transformation itself is
/// deterministic.
struct QuantileTransform {
  std::vector<double> quantiles;  // nondecreasing reference values

  double transform(double v) const;
};

QuantileTransform fit_quantile(std::span<const double> values, std::size_t n_bins, double noise,
                               Rng& rng);

/// Smoothed target-mean encoding of one categorical column:
/// enc(c) = (sum_y(c) + m * global_mean) / (count(c) + m); unseen categories
/// fall back to the global mean.
struct TargetEncoder {
  std::map<std::string, double> encoding;
  double fallback = 0.0;

  double encode(const std::string& category) const {
    const auto it = encoding.find(category);
    return it == encoding.end() ? fallback : it->second;
  }
};

TargetEncoder fit_target_encoding(std::span<const std::string> categories,
                                  std::span<const double> targets, double smoothing = 10.0);

/// Numeric target column of a table per the schema declaration (works before
/// any pipeline is fitted; fitting itself needs these values).
std::vector<double> extract_targets(const RawTable& table, const Schema& schema);

/// The fitted preprocessing pipeline persisted with the model: per-feature
/// target encoding (categoricals), mean imputation (numerics), then the
/// Gaussian quantile transform for every feature.
class Pipeline {
 public:
  struct Feature {
    std::string name;
    bool categorical = false;
    double impute_mean = 0.0;  // raw-space mean used for missing numerics
    TargetEncoder encoder;     // categorical features only
    QuantileTransform quantile;
  };

  static constexpr std::size_t kDefaultBins = 2000;
  static constexpr double kDefaultFitNoise = 1e-5;
  static constexpr double kDefaultSmoothing = 10.0;

  /// Fits encoders and quantile maps on the given table (train split only).
  /// targets are needed for target encoding; pass the training labels.
  void fit(const RawTable& table, const Schema& schema, std::span<const double> targets,
           Rng& rng, std::size_t n_bins = kDefaultBins, double noise = kDefaultFitNoise,
           double smoothing = kDefaultSmoothing);

  bool fitted() const { return fitted_; }
  std::size_t num_features() const { return features_.size(); }
  const std::vector<Feature>& features() const { return features_; }
  const std::string& target_name() const { return target_name_; }
  const Schema& schema() const { return schema_; }

  /// Target-encode categoricals and impute missing numerics; no quantile
  /// stage. Columns are matched by name against the fitted schema.
  Matrix encode(const RawTable& table) const;

  /// Quantile stage only, on an already-encoded matrix.
  Matrix transform_encoded(const Matrix& encoded) const;

  /// Full transform: encode + quantile.
  Matrix transform(const RawTable& table) const;

  /// Numeric targets from the table's target column (throws if absent).
  std::vector<double> extract_targets(const RawTable& table) const;
  bool has_target_column(const RawTable& table) const;

  // model_io needs the raw pieces for serialization.
  std::vector<Feature>& mutable_features() { return features_; }
  void set_fitted(std::string target_name, Schema schema) {
    fitted_ = true;
    target_name_ = std::move(target_name);
    schema_ = std::move(schema);
  }

 private:
  bool fitted_ = false;
  std::string target_name_;
  Schema schema_;
  std::vector<Feature> features_;
};

}  // namespace nodegam
