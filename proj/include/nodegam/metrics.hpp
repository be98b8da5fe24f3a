#pragma once

#include <span>

namespace nodegam {

/// Area under the ROC curve from raw scores (Mann-Whitney form, ties get
/// average rank). Requires both classes present.
double auc(std::span<const double> scores, std::span<const double> labels);

double rmse(std::span<const double> pred, std::span<const double> truth);

/// Pearson correlation; optional nonnegative weights.
double pearson(std::span<const double> a, std::span<const double> b,
               std::span<const double> weights = {});

/// Kolmogorov-Smirnov distance of a sample to the standard normal.
double ks_to_standard_normal(std::span<const double> sample);

}  // namespace nodegam
