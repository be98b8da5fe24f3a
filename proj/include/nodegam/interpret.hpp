#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nodegam/matrix.hpp"
#include "nodegam/network.hpp"

namespace nodegam {

/// One main-effect graph: grid of feature values (raw/encoded units) and the
/// additive contribution at each grid point. counts carry the dataset weight
/// of each grid point for centering and importance.
struct ShapeFunction {
  std::size_t feature = 0;
  std::string name;
  std::vector<double> grid;    // sorted ascending
  std::vector<double> values;
  std::vector<double> counts;
  double importance = 0.0;
};

/// One pairwise-interaction table over the two features' grids.
struct InteractionSurface {
  std::size_t feature_i = 0, feature_j = 0;  // i < j
  std::string name_i, name_j;
  std::vector<double> grid_i, grid_j;
  Matrix values;  // [grid_i.size() x grid_j.size()]
  Matrix counts;
  double importance = 0.0;
};

struct GamExplanation {
  double intercept = 0.0;
  Task task = Task::regression;
  std::vector<ShapeFunction> shapes;
  std::vector<InteractionSurface> interactions;
};

/// Quantile binning of one column: at most max_bins bins, bin representative
/// = within-bin mean, counts = bin occupancy. Columns with few unique values
/// get their exact values back.
struct FeatureBins {
  std::vector<double> reps;
  std::vector<double> counts;
};
FeatureBins quantile_bins(std::span<const double> column, std::size_t max_bins);

/// Index of the grid point nearest to v (grid sorted ascending).
std::size_t nearest_grid_index(const std::vector<double>& grid, double v);

using PredictFn = std::function<std::vector<double>(const Matrix&)>;

/// Shape extraction for additive (GAM) models by output differencing:
/// f_j(v) = predict(baseline with x_j = v) - predict(baseline). Verifies
/// additivity against `probe_baselines` random baselines (differences must
/// agree within 1e-6) and throws invalid_state_error for non-additive
/// models. Terms come back centered (data-weighted mean zero), the removed
/// means accumulated into the intercept.
GamExplanation extract_gam_shapes(const PredictFn& predict, const Matrix& data,
                                  std::span<const std::string> feature_names,
                                  std::size_t max_bins = 256, std::size_t baseline_row = 0,
                                  std::size_t probe_baselines = 10,
                                  std::uint64_t probe_seed = 17);

/// GA2M term aggregation: bins every feature into at most max_bins quantile
/// bins, then accumulates each tree's weighted output into the table of its
/// selected feature pair (degenerate pairs land in the main effect).
/// `to_model_space` maps encoded-raw rows into the model's input space (the
/// pipeline's quantile stage; identity when the model was trained on raw
/// values). The result is unpurified and uncentered.
GamExplanation extract_ga2m_terms(const NodeGamModel& model, const Matrix& data,
                                  const std::function<Matrix(const Matrix&)>& to_model_space,
                                  std::span<const std::string> feature_names,
                                  std::size_t max_bins = 256);

/// Alternating row/column mean extraction (moves interaction mass into the
/// main effects) until every mean is below `tol` or max_sweeps passes.
/// Returns the number of sweeps used. Pointwise term sums are preserved.
std::size_t purify(InteractionSurface& surface, ShapeFunction& main_i, ShapeFunction& main_j,
                   bool weighted = false, double tol = 1e-10, std::size_t max_sweeps = 500);

/// Purifies every interaction surface of the explanation.
void purify_all(GamExplanation& explanation, bool weighted = false, double tol = 1e-10,
                std::size_t max_sweeps = 500);

/// Shifts every main effect to data-weighted mean zero, accumulating the
/// shifts into the intercept. Model reconstruction is unchanged.
void center_terms(GamExplanation& explanation);

/// Data-weighted mean absolute contribution of a centered term.
double importance_of(std::span<const double> values, std::span<const double> counts);

/// Fills the importance fields and sorts interactions by importance
/// descending.
void finalize_importances(GamExplanation& explanation);

/// Explanation value at a row (each feature snapped to its nearest grid
/// point): intercept + sum of mains + sum of pairs.
double explanation_value(const GamExplanation& explanation, std::span<const double> row);

/// The row with every feature snapped to its nearest grid representative.
std::vector<double> snap_row(const GamExplanation& explanation, std::span<const double> row);

/// Serialization for downstream plotting (JSON text).
std::string explanation_to_json(const GamExplanation& explanation);
GamExplanation explanation_from_json(const std::string& text);

}  // namespace nodegam
