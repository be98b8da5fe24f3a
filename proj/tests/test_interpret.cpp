#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nodegam/errors.hpp"
#include "nodegam/interpret.hpp"
#include "nodegam/metrics.hpp"
#include "nodegam/rng.hpp"

using namespace nodegam;

namespace {

InteractionSurface make_surface(std::vector<std::vector<double>> values) {
  InteractionSurface s;
  s.feature_i = 0;
  s.feature_j = 1;
  s.grid_i.resize(values.size());
  s.grid_j.resize(values[0].size());
  for (std::size_t i = 0; i < s.grid_i.size(); ++i) s.grid_i[i] = static_cast<double>(i);
  for (std::size_t j = 0; j < s.grid_j.size(); ++j) s.grid_j[j] = static_cast<double>(j);
  s.values = Matrix(s.grid_i.size(), s.grid_j.size());
  s.counts = Matrix(s.grid_i.size(), s.grid_j.size(), 1.0);
  for (std::size_t i = 0; i < s.grid_i.size(); ++i)
    for (std::size_t j = 0; j < s.grid_j.size(); ++j) s.values(i, j) = values[i][j];
  return s;
}

ShapeFunction zero_main(std::size_t feature, std::size_t size) {
  ShapeFunction f;
  f.feature = feature;
  f.grid.resize(size);
  for (std::size_t i = 0; i < size; ++i) f.grid[i] = static_cast<double>(i);
  f.values.assign(size, 0.0);
  f.counts.assign(size, 1.0);
  return f;
}

}  // namespace

TEST_CASE("purify: hand-worked 2x2 case matches exactly") {
  auto surface = make_surface({{2, 0}, {0, 0}});
  auto fi = zero_main(0, 2);
  auto fj = zero_main(1, 2);
  purify(surface, fi, fj);
  CHECK(fi.values == std::vector<double>{1.0, 0.0});
  CHECK(fj.values == std::vector<double>{0.5, -0.5});
  CHECK(surface.values(0, 0) == 0.5);
  CHECK(surface.values(0, 1) == -0.5);
  CHECK(surface.values(1, 0) == -0.5);
  CHECK(surface.values(1, 1) == 0.5);
  // Cell sums preserved: (0,0) was 2, now 1 + 0.5 + 0.5 = 2.
  CHECK(fi.values[0] + fj.values[0] + surface.values(0, 0) == 2.0);
}

TEST_CASE("purify: constant table absorbs into the mains") {
  auto surface = make_surface({{1, 1}, {1, 1}});
  auto fi = zero_main(0, 2);
  auto fj = zero_main(1, 2);
  purify(surface, fi, fj);
  for (double v : surface.values.flat()) CHECK(v == 0.0);
  // One unit moved out; where it sits between the mains is split-dependent,
  // but the pointwise reconstruction is fixed.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(fi.values[i] + fj.values[j] + surface.values(i, j) ==
            doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("purify: already-pure tables are untouched") {
  auto surface = make_surface({{1, -1}, {-1, 1}});
  auto fi = zero_main(0, 2);
  auto fj = zero_main(1, 2);
  const std::size_t sweeps = purify(surface, fi, fj);
  CHECK(sweeps <= 1);
  CHECK(surface.values(0, 0) == 1.0);
  CHECK(surface.values(0, 1) == -1.0);
  CHECK(fi.values == std::vector<double>{0.0, 0.0});
  CHECK(fj.values == std::vector<double>{0.0, 0.0});
}

TEST_CASE("purify properties on random tables") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 2 + rng.uniform_int(63);
    const std::size_t cols = 2 + rng.uniform_int(63);
    std::vector<std::vector<double>> values(rows, std::vector<double>(cols));
    for (auto& row : values)
      for (double& v : row) v = rng.uniform(-5, 5);
    auto surface = make_surface(values);
    auto fi = zero_main(0, rows);
    auto fj = zero_main(1, cols);
    const Matrix original = surface.values;

    const std::size_t sweeps = purify(surface, fi, fj);
    CHECK(sweeps < 500);

    // Row and column means vanish.
    for (std::size_t i = 0; i < rows; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < cols; ++j) mean += surface.values(i, j);
      CHECK(std::abs(mean / static_cast<double>(cols)) < 1e-8);
    }
    for (std::size_t j = 0; j < cols; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < rows; ++i) mean += surface.values(i, j);
      CHECK(std::abs(mean / static_cast<double>(rows)) < 1e-8);
    }
    // Pointwise sums preserved.
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        CHECK(std::abs(fi.values[i] + fj.values[j] + surface.values(i, j) -
                       original(i, j)) < 1e-9);
    // Idempotent.
    const Matrix once = surface.values;
    auto fi2 = zero_main(0, rows);
    auto fj2 = zero_main(1, cols);
    purify(surface, fi2, fj2);
    for (std::size_t t = 0; t < once.size(); ++t)
      CHECK(std::abs(surface.values.flat()[t] - once.flat()[t]) < 1e-12);
    for (double v : fi2.values) CHECK(std::abs(v) < 1e-12);
    for (double v : fj2.values) CHECK(std::abs(v) < 1e-12);
  }
}

TEST_CASE("center_terms: shifts into the intercept without changing values") {
  GamExplanation expl;
  expl.intercept = 2.0;
  expl.shapes.push_back(zero_main(0, 3));
  expl.shapes[0].values = {4.0, 4.0, 4.0};  // constant: all into the intercept
  expl.shapes.push_back(zero_main(1, 2));
  expl.shapes[1].values = {1.0, -1.0};  // balanced: already centered

  GamExplanation before = expl;
  center_terms(expl);
  CHECK(expl.shapes[0].values == std::vector<double>{0.0, 0.0, 0.0});
  CHECK(expl.shapes[1].values == std::vector<double>{1.0, -1.0});
  CHECK(expl.intercept == 6.0);

  // Reconstruction unchanged at every grid combination.
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::vector<double> row = {static_cast<double>(rng.uniform_int(3)),
                                     static_cast<double>(rng.uniform_int(2))};
    CHECK(std::abs(explanation_value(before, row) - explanation_value(expl, row)) < 1e-9);
  }
  // Centering twice is a no-op.
  GamExplanation again = expl;
  center_terms(again);
  CHECK(again.intercept == expl.intercept);
  CHECK(again.shapes[0].values == expl.shapes[0].values);
}

TEST_CASE("importance: zero, balanced, and the 3v analytic case") {
  std::vector<double> zeros(5, 0.0), ones(5, 1.0);
  CHECK(importance_of(zeros, ones) == 0.0);

  std::vector<double> balanced = {1.0, -1.0};
  std::vector<double> w = {10.0, 10.0};
  CHECK(importance_of(balanced, w) == 1.0);

  // f(v) = 3v over standard-normal bins: E|3Z| = 3*sqrt(2/pi).
  Rng rng(5);
  std::vector<double> sample(20000);
  for (double& v : sample) v = rng.normal();
  const FeatureBins bins = quantile_bins(sample, 256);
  std::vector<double> values(bins.reps.size());
  for (std::size_t g = 0; g < bins.reps.size(); ++g) values[g] = 3.0 * bins.reps[g];
  const double expected = 3.0 * std::sqrt(2.0 / 3.14159265358979323846);
  CHECK(importance_of(values, bins.counts) == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("quantile_bins: exact small grids, bounded large ones") {
  std::vector<double> column = {3.0, 1.0, 3.0, 1.0, 2.0};
  const FeatureBins bins = quantile_bins(column, 256);
  CHECK(bins.reps == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(bins.counts == std::vector<double>{2.0, 1.0, 2.0});

  Rng rng(6);
  std::vector<double> many(10000);
  for (double& v : many) v = rng.normal();
  const FeatureBins big = quantile_bins(many, 64);
  CHECK(big.reps.size() <= 64);
  double total = 0.0;
  for (double c : big.counts) total += c;
  CHECK(total == 10000.0);
  for (std::size_t g = 1; g < big.reps.size(); ++g) CHECK(big.reps[g] > big.reps[g - 1]);
}

TEST_CASE("extract_gam_shapes: constant, step, and linear models") {
  Rng rng(7);
  const std::size_t n = 500;
  Matrix data(n, 2);
  for (double& v : data.flat()) v = rng.normal();
  const std::vector<std::string> names = {"x0", "x1"};

  {
    // Constant predictor: zero shapes, intercept = the constant.
    const PredictFn constant = [](const Matrix& m) {
      return std::vector<double>(m.rows(), 3.25);
    };
    const GamExplanation expl = extract_gam_shapes(constant, data, names);
    CHECK(expl.intercept == doctest::Approx(3.25).epsilon(1e-12));
    for (const auto& shape : expl.shapes)
      for (double v : shape.values) CHECK(std::abs(v) < 1e-12);
  }
  {
    // f(x) = 2 * 1[x0 > 0]: the shape steps by 2 across the threshold.
    const PredictFn step = [](const Matrix& m) {
      std::vector<double> out(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, 0) > 0.0 ? 2.0 : 0.0;
      return out;
    };
    const GamExplanation expl = extract_gam_shapes(step, data, names);
    const ShapeFunction& s0 = expl.shapes[0];
    double lo = 0.0, hi = 0.0;
    for (std::size_t g = 0; g < s0.grid.size(); ++g)
      (s0.grid[g] > 0.0 ? hi : lo) = s0.values[g];
    CHECK(hi - lo == doctest::Approx(2.0).epsilon(1e-9));
    for (double v : expl.shapes[1].values) CHECK(std::abs(v) < 1e-12);
  }
  {
    // f(x) = 3*x0 + 5 on roughly symmetric data.
    const PredictFn linear = [](const Matrix& m) {
      std::vector<double> out(m.rows());
      for (std::size_t r = 0; r < m.rows(); ++r) out[r] = 3.0 * m(r, 0) + 5.0;
      return out;
    };
    const GamExplanation expl = extract_gam_shapes(linear, data, names);
    const ShapeFunction& s0 = expl.shapes[0];
    // Centered slope-3 line: value - 3*(grid - weighted grid mean) == 0.
    double wmean = 0.0, wsum = 0.0;
    for (std::size_t g = 0; g < s0.grid.size(); ++g) {
      wmean += s0.grid[g] * s0.counts[g];
      wsum += s0.counts[g];
    }
    wmean /= wsum;
    for (std::size_t g = 0; g < s0.grid.size(); ++g)
      CHECK(s0.values[g] == doctest::Approx(3.0 * (s0.grid[g] - wmean)).epsilon(1e-9));
    CHECK(expl.intercept == doctest::Approx(5.0 + 3.0 * wmean).epsilon(1e-9));
  }
}

TEST_CASE("extract_gam_shapes: baseline independence and non-additivity detection") {
  Rng rng(8);
  Matrix data(200, 2);
  for (double& v : data.flat()) v = rng.normal();
  const std::vector<std::string> names = {"a", "b"};

  const PredictFn additive = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
      out[r] = std::sin(m(r, 0)) + 0.5 * m(r, 1) * m(r, 1);
    return out;
  };
  const GamExplanation a = extract_gam_shapes(additive, data, names, 256, 0);
  const GamExplanation b = extract_gam_shapes(additive, data, names, 256, 57);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t g = 0; g < a.shapes[j].values.size(); ++g)
      CHECK(std::abs(a.shapes[j].values[g] - b.shapes[j].values[g]) < 1e-9);

  const PredictFn coupled = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = m(r, 0) * m(r, 1);
    return out;
  };
  CHECK_THROWS_AS(extract_gam_shapes(coupled, data, names), invalid_state_error);
}

TEST_CASE("extract_ga2m_terms on a hand-built annealed model") {
  // One layer, two trees: tree 0 on the pair {0,1}, tree 1 degenerate on {2}.
  ModelConfig cfg;
  cfg.mode = GamMode::ga2m;
  cfg.arch = Arch::plain;
  cfg.num_layers = 1;
  cfg.trees_per_layer = 2;
  cfg.depth = 2;
  cfg.colsample = 1.0;
  cfg.l2_lambda = 0.0;
  cfg.last_dropout = 0.0;
  cfg.anneal_steps = 10;
  cfg.num_features = 3;
  cfg.num_outputs = 1;
  cfg.task = Task::regression;
  Rng rng(9);
  NodeGamModel model = NodeGamModel::init(cfg, rng);
  model.train_step = 11;  // annealed
  for (auto& layer : model.layers) layer.thresholds_ready = true;

  auto& layer = model.layers[0];
  layer.selection_logits = Matrix(2, 3);
  layer.selection_logits2 = Matrix(2, 3);
  layer.selection_logits(0, 0) = 9.0;   // tree 0: F1 -> feature 0
  layer.selection_logits2(0, 1) = 9.0;  // tree 0: F2 -> feature 1
  layer.selection_logits(1, 2) = 9.0;   // tree 1: F1 -> feature 2
  layer.selection_logits2(1, 2) = 9.0;  // tree 1: F2 -> feature 2
  layer.thresholds = Matrix(2, 2);      // thresholds at 0
  layer.log_slopes = Matrix(2, 2);
  for (std::size_t t = 0; t < layer.leaf_response.size(); ++t)
    layer.leaf_response.flat()[t] = static_cast<double>(t % 4) - 1.5;
  model.last_linear(0, 0) = 2.0;
  model.last_linear(1, 0) = -1.0;
  model.w0[0] = 0.5;
  model.output_bias = 0.25;

  const auto deps = model.dependency_report();
  CHECK(deps[0] == std::array<std::size_t, 2>{0, 1});
  CHECK(deps[1] == std::array<std::size_t, 2>{2, 2});

  Rng data_rng(10);
  Matrix data(400, 3);
  for (double& v : data.flat()) v = data_rng.normal();
  const auto identity = [](const Matrix& m) { return m; };
  GamExplanation expl =
      extract_ga2m_terms(model, data, identity, std::vector<std::string>{"a", "b", "c"}, 32);

  REQUIRE(expl.interactions.size() == 1);
  CHECK(expl.interactions[0].feature_i == 0);
  CHECK(expl.interactions[0].feature_j == 1);
  CHECK(expl.intercept == doctest::Approx(0.75).epsilon(1e-12));
  // Feature 0 and 1 mains are all zero before purification (no degenerate
  // tree touches them); feature 2 carries tree 1 times its weight.
  for (double v : expl.shapes[0].values) CHECK(v == 0.0);
  for (double v : expl.shapes[1].values) CHECK(v == 0.0);

  // Reconstruction at snapped rows, before purification.
  double worst = 0.0;
  for (std::size_t r = 0; r < 100; ++r) {
    const auto snapped = snap_row(expl, data.row(r));
    const Matrix one(1, 3, snapped);
    const double truth = model.predict(one)(0, 0);
    worst = std::max(worst, std::abs(explanation_value(expl, data.row(r)) - truth));
  }
  CHECK(worst <= 1e-5);

  // Purification + centering preserve the reconstruction.
  purify_all(expl);
  center_terms(expl);
  finalize_importances(expl);
  double worst2 = 0.0;
  for (std::size_t r = 0; r < 100; ++r) {
    const auto snapped = snap_row(expl, data.row(r));
    const Matrix one(1, 3, snapped);
    const double truth = model.predict(one)(0, 0);
    worst2 = std::max(worst2, std::abs(explanation_value(expl, data.row(r)) - truth));
  }
  CHECK(worst2 <= 1e-4);

  // Unannealed models are rejected.
  model.train_step = 5;
  CHECK_THROWS_AS(
      extract_ga2m_terms(model, data, identity, std::vector<std::string>{"a", "b", "c"}, 32),
      invalid_state_error);
}

TEST_CASE("explanation json round trip") {
  GamExplanation expl;
  expl.intercept = 1.5;
  expl.task = Task::binary;
  expl.shapes.push_back(zero_main(0, 3));
  expl.shapes[0].name = "age";
  expl.shapes[0].values = {0.1, -0.2, 0.1};
  auto surf = make_surface({{1, -1}, {-1, 1}});
  surf.name_i = "age";
  surf.name_j = "bmi";
  expl.interactions.push_back(surf);
  finalize_importances(expl);

  const std::string text = explanation_to_json(expl);
  const GamExplanation back = explanation_from_json(text);
  CHECK(back.intercept == expl.intercept);
  CHECK(back.shapes[0].values == expl.shapes[0].values);
  CHECK(back.interactions[0].values == expl.interactions[0].values);
  CHECK(back.task == Task::binary);
}
