#include "nodegam/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "nodegam/errors.hpp"
#include "nodegam/rng.hpp"

namespace nodegam {

FeatureBins quantile_bins(std::span<const double> column, std::size_t max_bins) {
  if (column.empty()) throw std::invalid_argument("quantile_bins: empty column");
  if (max_bins == 0) throw std::invalid_argument("quantile_bins: max_bins must be >= 1");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());

  FeatureBins bins;
  std::vector<double> uniq = sorted;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() <= max_bins) {
    bins.reps = uniq;
    bins.counts.assign(uniq.size(), 0.0);
    for (double v : sorted)
      bins.counts[nearest_grid_index(bins.reps, v)] += 1.0;
    return bins;
  }

  // Quantile edges over the sorted sample; representative = within-bin mean.
  const std::size_t n = sorted.size();
  std::size_t start = 0;
  for (std::size_t b = 0; b < max_bins; ++b) {
    std::size_t end = (b + 1 == max_bins) ? n : ((b + 1) * n) / max_bins;
    if (end <= start) continue;
    // Keep equal values in one bin.
    while (end < n && sorted[end] == sorted[end - 1]) ++end;
    double sum = 0.0;
    for (std::size_t t = start; t < end; ++t) sum += sorted[t];
    bins.reps.push_back(sum / static_cast<double>(end - start));
    bins.counts.push_back(static_cast<double>(end - start));
    start = end;
    if (start >= n) break;
  }
  return bins;
}

std::size_t nearest_grid_index(const std::vector<double>& grid, double v) {
  if (grid.empty()) throw std::invalid_argument("nearest_grid_index: empty grid");
  const auto it = std::lower_bound(grid.begin(), grid.end(), v);
  if (it == grid.begin()) return 0;
  if (it == grid.end()) return grid.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  return (v - grid[hi - 1] <= grid[hi] - v) ? hi - 1 : hi;
}

GamExplanation extract_gam_shapes(const PredictFn& predict, const Matrix& data,
                                  std::span<const std::string> feature_names,
                                  std::size_t max_bins, std::size_t baseline_row,
                                  std::size_t probe_baselines, std::uint64_t probe_seed) {
  const std::size_t n = data.rows(), d = data.cols();
  if (n == 0 || d == 0) throw std::invalid_argument("extract_gam_shapes: empty data");
  if (baseline_row >= n) throw std::invalid_argument("extract_gam_shapes: baseline row out of range");
  if (!feature_names.empty() && feature_names.size() != d)
    throw std::invalid_argument("extract_gam_shapes: name count mismatch");

  GamExplanation expl;
  std::vector<double> baseline(data.row(baseline_row).begin(), data.row(baseline_row).end());

  Matrix one(1, d, baseline);
  const double pred_base = predict(one)[0];

  // Grids and raw differences per feature.
  std::vector<double> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < n; ++r) column[r] = data(r, j);
    FeatureBins bins = quantile_bins(column, max_bins);

    Matrix probes(bins.reps.size(), d);
    for (std::size_t g = 0; g < bins.reps.size(); ++g) {
      std::copy(baseline.begin(), baseline.end(), probes.row(g).begin());
      probes(g, j) = bins.reps[g];
    }
    const std::vector<double> preds = predict(probes);

    ShapeFunction shape;
    shape.feature = j;
    shape.name = feature_names.empty() ? "feature_" + std::to_string(j) : feature_names[j];
    shape.grid = std::move(bins.reps);
    shape.counts = std::move(bins.counts);
    shape.values.resize(shape.grid.size());
    for (std::size_t g = 0; g < shape.grid.size(); ++g)
      shape.values[g] = preds[g] - pred_base;
    expl.shapes.push_back(std::move(shape));
  }

  // Additivity check: shapes probed from a different baseline may shift by
  // a per-feature constant (the baselines' own contribution), but the
  // differences along the grid must agree.
  if (probe_baselines > 1) {
    Rng rng(probe_seed);
    double worst = 0.0;
    for (std::size_t b = 0; b + 1 < probe_baselines; ++b) {
      const std::size_t row = static_cast<std::size_t>(rng.uniform_int(n));
      std::vector<double> alt(data.row(row).begin(), data.row(row).end());
      Matrix alt_base(1, d, alt);
      const double alt_pred = predict(alt_base)[0];
      for (std::size_t j = 0; j < d; ++j) {
        const ShapeFunction& shape = expl.shapes[j];
        bool have_offset = false;
        double offset = 0.0;
        for (std::size_t g = 0; g < shape.grid.size();
             g += std::max<std::size_t>(1, shape.grid.size() / 5)) {
          Matrix probe(1, d, alt);
          probe(0, j) = shape.grid[g];
          const double diff = predict(probe)[0] - alt_pred;
          if (!have_offset) {
            offset = diff - shape.values[g];
            have_offset = true;
          } else {
            worst = std::max(worst, std::abs(diff - shape.values[g] - offset));
          }
        }
      }
    }
    if (worst > 1e-6)
      throw invalid_state_error(
          "extract_gam_shapes: model is not additive (baseline dependence " +
          std::to_string(worst) + ")");
  }

  expl.intercept = pred_base;
  center_terms(expl);
  finalize_importances(expl);
  return expl;
}

GamExplanation extract_ga2m_terms(const NodeGamModel& model, const Matrix& data,
                                  const std::function<Matrix(const Matrix&)>& to_model_space,
                                  std::span<const std::string> feature_names,
                                  std::size_t max_bins) {
  if (!model.annealed())
    throw invalid_state_error("extract_ga2m_terms: temperature schedule not finished");
  const std::size_t n = data.rows(), d = data.cols();
  if (d != model.cfg.num_features)
    throw std::invalid_argument("extract_ga2m_terms: feature count mismatch");
  if (n == 0) throw std::invalid_argument("extract_ga2m_terms: empty data");

  const auto deps = model.dependency_report();
  const std::size_t d_out = model.cfg.response_dim();

  GamExplanation expl;
  expl.task = model.cfg.task;
  expl.intercept = model.w0.empty() ? model.output_bias : model.w0[0] + model.output_bias;

  // Per-feature grids.
  std::vector<FeatureBins> bins(d);
  std::vector<double> column(n);
  std::vector<double> col_mean(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < n; ++r) column[r] = data(r, j);
    bins[j] = quantile_bins(column, max_bins);
    for (double v : column) col_mean[j] += v;
    col_mean[j] /= static_cast<double>(n);
    ShapeFunction shape;
    shape.feature = j;
    shape.name = feature_names.empty() ? "feature_" + std::to_string(j) : feature_names[j];
    shape.grid = bins[j].reps;
    shape.counts = bins[j].counts;
    shape.values.assign(shape.grid.size(), 0.0);
    expl.shapes.push_back(std::move(shape));
  }

  // Group trees (layer-major global index) by their feature pair.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t t = 0; t < deps.size(); ++t)
    groups[{deps[t][0], deps[t][1]}].push_back(t);

  // Sum of the tree's weighted output channels at the probe rows.
  auto group_contribution = [&](const std::vector<std::size_t>& trees, const Matrix& probes) {
    NodeGamModel& m = const_cast<NodeGamModel&>(model);
    const ForwardResult fr = m.forward(to_model_space(probes), false, nullptr);
    std::vector<double> contrib(probes.rows(), 0.0);
    for (const std::size_t tree : trees) {
      for (std::size_t k = 0; k < d_out; ++k) {
        const std::size_t ch = tree * d_out + k;
        const double w = model.last_linear(ch, 0);
        if (w == 0.0) continue;
        for (std::size_t r = 0; r < probes.rows(); ++r)
          contrib[r] += fr.tree_outputs(r, ch) * w;
      }
    }
    return contrib;
  };

  for (const auto& [pair, trees] : groups) {
    const auto [a, b] = pair;
    if (a == b) {
      // Degenerate pair: pure main effect.
      const std::vector<double>& grid = expl.shapes[a].grid;
      Matrix probes(grid.size(), d);
      for (std::size_t g = 0; g < grid.size(); ++g) {
        for (std::size_t j = 0; j < d; ++j) probes(g, j) = col_mean[j];
        probes(g, a) = grid[g];
      }
      const std::vector<double> contrib = group_contribution(trees, probes);
      for (std::size_t g = 0; g < grid.size(); ++g) expl.shapes[a].values[g] += contrib[g];
    } else {
      const std::vector<double>& ga = expl.shapes[a].grid;
      const std::vector<double>& gb = expl.shapes[b].grid;
      Matrix probes(ga.size() * gb.size(), d);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        for (std::size_t j2 = 0; j2 < gb.size(); ++j2) {
          const std::size_t r = i * gb.size() + j2;
          for (std::size_t j = 0; j < d; ++j) probes(r, j) = col_mean[j];
          probes(r, a) = ga[i];
          probes(r, b) = gb[j2];
        }
      }
      const std::vector<double> contrib = group_contribution(trees, probes);

      InteractionSurface surf;
      surf.feature_i = a;
      surf.feature_j = b;
      surf.name_i = expl.shapes[a].name;
      surf.name_j = expl.shapes[b].name;
      surf.grid_i = ga;
      surf.grid_j = gb;
      surf.values = Matrix(ga.size(), gb.size());
      surf.counts = Matrix(ga.size(), gb.size());
      for (std::size_t i = 0; i < ga.size(); ++i)
        for (std::size_t j2 = 0; j2 < gb.size(); ++j2)
          surf.values(i, j2) = contrib[i * gb.size() + j2];
      // Joint occupancy for weights.
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t bi = nearest_grid_index(surf.grid_i, data(r, a));
        const std::size_t bj = nearest_grid_index(surf.grid_j, data(r, b));
        surf.counts(bi, bj) += 1.0;
      }
      expl.interactions.push_back(std::move(surf));
    }
  }
  return expl;
}

std::size_t purify(InteractionSurface& surface, ShapeFunction& main_i, ShapeFunction& main_j,
                   bool weighted, double tol, std::size_t max_sweeps) {
  Matrix& f = surface.values;
  const std::size_t rows = f.rows(), cols = f.cols();
  if (main_i.values.size() != rows || main_j.values.size() != cols)
    throw std::invalid_argument("purify: main grids do not match the surface");

  // Marginal weights for the weighted variant.
  std::vector<double> wi(rows, 1.0), wj(cols, 1.0);
  if (weighted) {
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += surface.counts(i, j);
      wi[i] = acc;
    }
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < rows; ++i) acc += surface.counts(i, j);
      wj[j] = acc;
    }
  }
  const double wi_sum = [&] {
    double acc = 0.0;
    for (double v : wi) acc += v;
    return acc;
  }();
  const double wj_sum = [&] {
    double acc = 0.0;
    for (double v : wj) acc += v;
    return acc;
  }();

  std::size_t sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    double worst = 0.0;
    // Rows into main_i.
    for (std::size_t i = 0; i < rows; ++i) {
      double a = 0.0;
      for (std::size_t j = 0; j < cols; ++j) a += wj[j] * f(i, j);
      a /= wj_sum;
      worst = std::max(worst, std::abs(a));
      if (a != 0.0) {
        for (std::size_t j = 0; j < cols; ++j) f(i, j) -= a;
        main_i.values[i] += a;
      }
    }
    // Columns into main_j.
    for (std::size_t j = 0; j < cols; ++j) {
      double a = 0.0;
      for (std::size_t i = 0; i < rows; ++i) a += wi[i] * f(i, j);
      a /= wi_sum;
      worst = std::max(worst, std::abs(a));
      if (a != 0.0) {
        for (std::size_t i = 0; i < rows; ++i) f(i, j) -= a;
        main_j.values[j] += a;
      }
    }
    if (worst < tol) {
      ++sweep;
      break;
    }
  }
  return sweep;
}

void purify_all(GamExplanation& explanation, bool weighted, double tol,
                std::size_t max_sweeps) {
  for (InteractionSurface& surf : explanation.interactions)
    purify(surf, explanation.shapes[surf.feature_i], explanation.shapes[surf.feature_j],
           weighted, tol, max_sweeps);
}

void center_terms(GamExplanation& explanation) {
  for (ShapeFunction& shape : explanation.shapes) {
    double wsum = 0.0, mean = 0.0;
    for (std::size_t g = 0; g < shape.values.size(); ++g) {
      wsum += shape.counts[g];
      mean += shape.counts[g] * shape.values[g];
    }
    if (wsum == 0.0) continue;
    mean /= wsum;
    if (mean != 0.0) {
      for (double& v : shape.values) v -= mean;
      explanation.intercept += mean;
    }
  }
}

double importance_of(std::span<const double> values, std::span<const double> counts) {
  double wsum = 0.0, acc = 0.0;
  for (std::size_t g = 0; g < values.size(); ++g) {
    wsum += counts[g];
    acc += counts[g] * std::abs(values[g]);
  }
  return wsum > 0.0 ? acc / wsum : 0.0;
}

void finalize_importances(GamExplanation& explanation) {
  for (ShapeFunction& shape : explanation.shapes)
    shape.importance = importance_of(shape.values, shape.counts);
  for (InteractionSurface& surf : explanation.interactions)
    surf.importance = importance_of(surf.values.flat(), surf.counts.flat());
  std::sort(explanation.interactions.begin(), explanation.interactions.end(),
            [](const InteractionSurface& a, const InteractionSurface& b) {
              return a.importance > b.importance;
            });
}

std::vector<double> snap_row(const GamExplanation& explanation, std::span<const double> row) {
  std::vector<double> snapped(row.begin(), row.end());
  for (const ShapeFunction& shape : explanation.shapes)
    snapped[shape.feature] = shape.grid[nearest_grid_index(shape.grid, row[shape.feature])];
  return snapped;
}

double explanation_value(const GamExplanation& explanation, std::span<const double> row) {
  double acc = explanation.intercept;
  std::vector<std::size_t> idx(explanation.shapes.size(), 0);
  for (const ShapeFunction& shape : explanation.shapes) {
    const std::size_t g = nearest_grid_index(shape.grid, row[shape.feature]);
    idx[shape.feature] = g;
    acc += shape.values[g];
  }
  for (const InteractionSurface& surf : explanation.interactions)
    acc += surf.values(idx[surf.feature_i], idx[surf.feature_j]);
  return acc;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j[0].size() : 0;
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  return m;
}

}  // namespace

std::string explanation_to_json(const GamExplanation& explanation) {
  nlohmann::json j;
  j["intercept"] = explanation.intercept;
  j["task"] = explanation.task == Task::binary ? "binary" : "regression";
  j["units"] = explanation.task == Task::binary ? "log-odds" : "target";
  j["features"] = nlohmann::json::array();
  for (const ShapeFunction& shape : explanation.shapes) {
    nlohmann::json f;
    f["index"] = shape.feature;
    f["name"] = shape.name;
    f["grid"] = shape.grid;
    f["values"] = shape.values;
    f["counts"] = shape.counts;
    f["importance"] = shape.importance;
    j["features"].push_back(std::move(f));
  }
  j["interactions"] = nlohmann::json::array();
  for (const InteractionSurface& surf : explanation.interactions) {
    nlohmann::json s;
    s["index_i"] = surf.feature_i;
    s["index_j"] = surf.feature_j;
    s["name_i"] = surf.name_i;
    s["name_j"] = surf.name_j;
    s["grid_i"] = surf.grid_i;
    s["grid_j"] = surf.grid_j;
    s["values"] = matrix_to_json(surf.values);
    s["counts"] = matrix_to_json(surf.counts);
    s["importance"] = surf.importance;
    j["interactions"].push_back(std::move(s));
  }
  return j.dump(2);
}

GamExplanation explanation_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  GamExplanation expl;
  expl.intercept = j.at("intercept").get<double>();
  expl.task = j.at("task").get<std::string>() == "binary" ? Task::binary : Task::regression;
  for (const auto& f : j.at("features")) {
    ShapeFunction shape;
    shape.feature = f.at("index").get<std::size_t>();
    shape.name = f.at("name").get<std::string>();
    shape.grid = f.at("grid").get<std::vector<double>>();
    shape.values = f.at("values").get<std::vector<double>>();
    shape.counts = f.at("counts").get<std::vector<double>>();
    shape.importance = f.at("importance").get<double>();
    expl.shapes.push_back(std::move(shape));
  }
  for (const auto& s : j.at("interactions")) {
    InteractionSurface surf;
    surf.feature_i = s.at("index_i").get<std::size_t>();
    surf.feature_j = s.at("index_j").get<std::size_t>();
    surf.name_i = s.at("name_i").get<std::string>();
    surf.name_j = s.at("name_j").get<std::string>();
    surf.grid_i = s.at("grid_i").get<std::vector<double>>();
    surf.grid_j = s.at("grid_j").get<std::vector<double>>();
    surf.values = matrix_from_json(s.at("values"));
    surf.counts = matrix_from_json(s.at("counts"));
    surf.importance = s.at("importance").get<double>();
    expl.interactions.push_back(std::move(surf));
  }
  return expl;
}

}  // namespace nodegam
