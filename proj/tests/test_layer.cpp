#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "nodegam/errors.hpp"
#include "nodegam/layer.hpp"
#include "nodegam/network.hpp"
#include "nodegam/rng.hpp"

using namespace nodegam;

namespace {

GamTreeLayer hand_layer(GamMode mode, std::size_t depth, std::size_t num_features,
                        std::size_t d_out = 1) {
  GamTreeLayer layer;
  layer.cfg.mode = mode;
  layer.cfg.num_trees = 1;
  layer.cfg.depth = depth;
  layer.cfg.response_dim = d_out;
  layer.cfg.num_features = num_features;
  layer.cfg.colsample = 1.0;
  layer.selection_logits = Matrix(1, num_features);
  if (mode == GamMode::ga2m) layer.selection_logits2 = Matrix(1, num_features);
  layer.thresholds = Matrix(1, depth);
  layer.log_slopes = Matrix(1, depth);
  layer.leaf_response = Matrix(1, (std::size_t{1} << depth) * d_out);
  layer.allowed.assign(num_features, 1);
  layer.thresholds_ready = true;
  return layer;
}

}  // namespace

TEST_CASE("init_layer column subsampling") {
  Rng rng(3);
  LayerConfig cfg;
  cfg.num_trees = 8;
  cfg.depth = 2;
  cfg.num_features = 10;

  cfg.colsample = 1.0;
  auto full = init_layer(cfg, rng);
  for (std::size_t i = 0; i < cfg.num_trees; ++i)
    CHECK(full.allowed_count(i) == 10);

  cfg.colsample = 1e-5;  // max(ceil(D*eta), 1) == 1
  auto one = init_layer(cfg, rng);
  for (std::size_t i = 0; i < cfg.num_trees; ++i)
    CHECK(one.allowed_count(i) == 1);

  cfg.num_features = 4;
  cfg.colsample = 0.5;
  auto half = init_layer(cfg, rng);
  for (std::size_t i = 0; i < cfg.num_trees; ++i) {
    CHECK(half.allowed_count(i) == 2);
    // Excluded features can never be selected, at any temperature.
    const auto probs = choice(half.selection_logits.row(i), half.allowed_row(i), 1.0);
    for (std::size_t j = 0; j < 4; ++j)
      if (!half.allowed_row(i)[j]) CHECK(probs[j] == 0.0);
  }

  cfg.colsample = 0.0;
  CHECK_THROWS_AS(init_layer(cfg, rng), std::invalid_argument);
}

TEST_CASE("choice: exclusion, hard argmax, saturation") {
  const double ninf = -std::numeric_limits<double>::infinity();
  {
    const std::vector<double> logits = {0.0, 0.0, ninf};
    const auto g = choice(logits, {}, 1.0);
    CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(g[2] == 0.0);
  }
  {
    const auto g = choice(std::vector<double>{2.0, 1.0, 0.0}, {}, 0.0);
    CHECK(g == std::vector<double>{1.0, 0.0, 0.0});
  }
  {
    // Logit gap over temperature = 4 >= 2 saturates the 1.5-entmax.
    const auto g = choice(std::vector<double>{1.0, 0.0, 0.0}, {}, 0.25);
    CHECK(g == std::vector<double>{1.0, 0.0, 0.0});
  }
  const std::vector<double> dead = {ninf, ninf};
  CHECK_THROWS_AS(choice(dead, {}, 1.0), invalid_state_error);
  const std::vector<double> masked = {1.0, 2.0};
  const std::vector<std::uint8_t> none = {0, 0};
  CHECK_THROWS_AS(choice(masked, none, 1.0), invalid_state_error);
}

TEST_CASE("gam_gate") {
  Matrix prev = Matrix::from_rows({{0, 1, 0}, {1, 0, 0}, {0.5, 0.5, 0}});
  const std::vector<double> e2 = {0.0, 1.0, 0.0};
  const auto g = gam_gate(prev, e2);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.5);
  Matrix half_prev = Matrix::from_rows({{0.5, 0.5, 0.0}});
  const std::vector<double> half = {0.5, 0.5, 0.0};
  CHECK(gam_gate(half_prev, half)[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("ga2m_gate: cap, unordered-pair symmetry, mismatch") {
  const std::vector<double> e1 = {1, 0, 0, 0};
  const std::vector<double> e2 = {0, 1, 0, 0};
  const std::vector<double> e3 = {0, 0, 1, 0};
  auto as_matrix = [](const std::vector<double>& v) { return Matrix(1, v.size(), v); };

  // Same degenerate pair on both sides: q = 1*1 + 1*1 = 2, capped at 1.
  CHECK(ga2m_gate(e3, e3, as_matrix(e3), as_matrix(e3))[0] == 1.0);
  // {1,2} vs {2,1}: the swapped matching opens the gate.
  CHECK(ga2m_gate(e1, e2, as_matrix(e2), as_matrix(e1))[0] == 1.0);
  // {1,2} vs {1,3}: pair mismatch closes it.
  CHECK(ga2m_gate(e1, e2, as_matrix(e1), as_matrix(e3))[0] == 0.0);
}

TEST_CASE("mix_weights: normalization and the all-closed guard") {
  {
    const auto mix = mix_weights(std::vector<double>{0.5, 0.0, 1.5});
    double sum = 0.0;
    for (double v : mix.val) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mix.idx == std::vector<std::uint32_t>{0, 2});
  }
  {
    const auto mix = mix_weights(std::vector<double>{0.0, 0.0});
    CHECK(mix.idx.empty());  // previous-output term omitted entirely
  }
  {
    // Attention over open gates sums to 1; closed gates get exactly 0.
    const std::vector<double> gates = {1.0, 0.0, 1.0, 1.0};
    const std::vector<double> attn = {0.3, 100.0, -0.2, 0.1};
    const auto mix = mix_weights(gates, attn);
    double sum = 0.0;
    for (std::size_t t = 0; t < mix.idx.size(); ++t) {
      CHECK(mix.idx[t] != 1);
      sum += mix.val[t];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("tree_forward_gam hand evaluation at saturation") {
  auto layer = hand_layer(GamMode::gam, 1, 2);
  layer.selection_logits(0, 0) = 5.0;  // one-hot on feature 0 at T=0
  layer.leaf_response(0, 0) = 5.0;
  layer.leaf_response(0, 1) = -5.0;

  Matrix x = Matrix::from_rows({{10.0, 3.0}, {-10.0, 3.0}, {0.0, 3.0}});
  const auto res = tree_forward_gam(x, layer, 0, 0.0);
  CHECK(res.outputs(0, 0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(res.outputs(1, 0) == doctest::Approx(-5.0).epsilon(1e-14));
  CHECK(res.outputs(2, 0) == doctest::Approx(0.0).scale(1).epsilon(1e-14));
}

TEST_CASE("tree_forward_ga2m: leaf indexing and K1/K2 alternation") {
  {
    auto layer = hand_layer(GamMode::ga2m, 2, 2);
    layer.selection_logits(0, 0) = 5.0;   // G1 = e1
    layer.selection_logits2(0, 1) = 5.0;  // G2 = e2
    for (std::size_t lam = 0; lam < 4; ++lam)
      layer.leaf_response(0, lam) = static_cast<double>(lam + 1) * 10.0;

    Matrix x = Matrix::from_rows({{10.0, -10.0}});
    const auto res = tree_forward_ga2m(x, layer, 0, 0.0);
    // H1 = entmoid(10) = 1, H2 = entmoid(-10) = 0 -> leaf (H1, 1-H2) = index 1.
    CHECK(res.outputs(0, 0) == doctest::Approx(20.0).epsilon(1e-14));
  }
  {
    // Degenerate tree: both selectors on the same feature.
    auto layer = hand_layer(GamMode::ga2m, 2, 2);
    layer.selection_logits(0, 0) = 5.0;
    layer.selection_logits2(0, 0) = 5.0;
    layer.leaf_response(0, 0) = 1.0;
    Matrix a = Matrix::from_rows({{3.0, 100.0}});
    Matrix b = Matrix::from_rows({{3.0, -100.0}});
    const auto ra = tree_forward_ga2m(a, layer, 0, 0.0);
    const auto rb = tree_forward_ga2m(b, layer, 0, 0.0);
    CHECK(ra.outputs(0, 0) == rb.outputs(0, 0));
  }
  {
    // Depth 4: selectors alternate F1, F2, F1, F2 down the tree.
    auto layer = hand_layer(GamMode::ga2m, 4, 2);
    layer.selection_logits(0, 0) = 5.0;
    layer.selection_logits2(0, 1) = 5.0;
    for (std::size_t c = 0; c < 4; ++c) layer.thresholds(0, c) = static_cast<double>(c + 1);
    for (std::size_t lam = 0; lam < 16; ++lam)
      layer.leaf_response(0, lam) = static_cast<double>(lam);
    Matrix x = Matrix::from_rows({{10.0, -10.0}});
    // K = [10, -10, 10, -10] vs thresholds [1,2,3,4]: H = [1,0,1,0]
    // -> bits (0,1,0,1) -> leaf 5.
    const auto res = tree_forward_ga2m(x, layer, 0, 0.0);
    CHECK(res.outputs(0, 0) == doctest::Approx(5.0).epsilon(1e-14));
  }
}

TEST_CASE("annealed trees depend only on their selected features") {
  Rng rng(21);
  LayerConfig cfg;
  cfg.mode = GamMode::gam;
  cfg.num_trees = 6;
  cfg.depth = 3;
  cfg.num_features = 5;
  cfg.colsample = 1.0;
  auto layer = init_layer(cfg, rng);
  layer.thresholds_ready = true;

  for (std::size_t i = 0; i < cfg.num_trees; ++i) {
    const auto sel = choice(layer.selection_logits.row(i), layer.allowed_row(i), 0.0);
    std::size_t picked = 0;
    for (std::size_t j = 0; j < 5; ++j)
      if (sel[j] == 1.0) picked = j;
    Matrix x(1, 5);
    for (std::size_t j = 0; j < 5; ++j) x(0, j) = rng.uniform(-2, 2);
    const auto base = tree_forward_gam(x, layer, i, 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
      if (j == picked) continue;
      Matrix xb = x;
      xb(0, j) += 13.7;
      const auto moved = tree_forward_gam(xb, layer, i, 0.0);
      CHECK(moved.outputs(0, 0) == base.outputs(0, 0));  // bit-identical
    }
  }
}

TEST_CASE("tree output is bounded by the largest leaf response") {
  Rng rng(22);
  LayerConfig cfg;
  cfg.mode = GamMode::gam;
  cfg.num_trees = 4;
  cfg.depth = 4;
  cfg.num_features = 3;
  cfg.colsample = 1.0;
  auto layer = init_layer(cfg, rng);
  layer.thresholds_ready = true;
  double w_max = 0.0;
  for (double w : layer.leaf_response.flat()) w_max = std::max(w_max, std::abs(w));

  Matrix x(64, 3);
  for (double& v : x.flat()) v = rng.uniform(-5, 5);
  for (std::size_t i = 0; i < cfg.num_trees; ++i) {
    const auto res = tree_forward_gam(x, layer, i, 0.7);
    for (double h : res.outputs.flat()) CHECK(std::abs(h) <= w_max + 1e-12);
  }
}

TEST_CASE("network engine matches the reference tree composition") {
  for (const GamMode mode : {GamMode::gam, GamMode::ga2m}) {
    for (const Arch arch : {Arch::plain, Arch::attention}) {
      ModelConfig cfg;
      cfg.mode = mode;
      cfg.arch = arch;
      cfg.num_layers = 3;
      cfg.trees_per_layer = 5;
      cfg.depth = mode == GamMode::ga2m ? 2 : 3;
      cfg.addi_tree_dim = 1;
      cfg.num_features = 4;
      cfg.colsample = 1.0;
      cfg.attention_dim = 3;
      cfg.output_dropout = 0.0;
      cfg.last_dropout = 0.0;
      cfg.num_outputs = 1;
      cfg.task = Task::regression;
      Rng rng(5);
      NodeGamModel model = NodeGamModel::init(cfg, rng);
      for (auto& layer : model.layers) layer.thresholds_ready = true;

      Matrix x(8, 4);
      for (double& v : x.flat()) v = rng.uniform(-2, 2);
      const double temp = 0.8;
      ForwardTrace trace = model.forward_trace(x, temp, false, nullptr, false);

      const std::size_t d_out = cfg.response_dim();
      Matrix prev_out(8, 0);
      Matrix prev_sel1(0, 4), prev_sel2(0, 4);
      std::size_t channel = 0;
      for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        Matrix next_out(8, prev_out.cols() + cfg.trees_per_layer * d_out);
        for (std::size_t r = 0; r < 8; ++r)
          std::copy(prev_out.row(r).begin(), prev_out.row(r).end(), next_out.row(r).begin());
        Matrix next_sel1(prev_sel1.rows() + cfg.trees_per_layer * d_out, 4);
        Matrix next_sel2 = next_sel1;
        for (std::size_t p = 0; p < prev_sel1.rows(); ++p) {
          std::copy(prev_sel1.row(p).begin(), prev_sel1.row(p).end(), next_sel1.row(p).begin());
          if (mode == GamMode::ga2m)
            std::copy(prev_sel2.row(p).begin(), prev_sel2.row(p).end(),
                      next_sel2.row(p).begin());
        }

        for (std::size_t i = 0; i < cfg.trees_per_layer; ++i) {
          PreviousOutputs prev;
          std::vector<double> attn_col;
          const PreviousOutputs* prev_ptr = nullptr;
          if (l > 0) {
            prev.outputs = &prev_out;
            prev.selection1 = &prev_sel1;
            prev.selection2 = &prev_sel2;
            prev_ptr = &prev;
            if (arch == Arch::attention) {
              attn_col.resize(prev_out.cols());
              for (std::size_t p = 0; p < prev_out.cols(); ++p) {
                double acc = 0.0;
                for (std::size_t e = 0; e < cfg.attention_dim; ++e)
                  acc += model.attn_b[l](p, e) * model.attn_c[l](e, i);
                attn_col[p] = acc;
              }
            }
          }
          const auto ref =
              mode == GamMode::gam
                  ? tree_forward_gam(x, model.layers[l], i, temp, prev_ptr, attn_col)
                  : tree_forward_ga2m(x, model.layers[l], i, temp, prev_ptr, attn_col);
          for (std::size_t k = 0; k < d_out; ++k) {
            const std::size_t ch = channel + i * d_out + k;
            for (std::size_t r = 0; r < 8; ++r) {
              CHECK(trace.xp[ch * 8 + r] ==
                    doctest::Approx(ref.outputs(r, k)).epsilon(1e-12));
              next_out(r, prev_out.cols() + i * d_out + k) = ref.outputs(r, k);
            }
            for (std::size_t j = 0; j < 4; ++j) {
              next_sel1(prev_sel1.rows() + i * d_out + k, j) = ref.sel1[j];
              if (mode == GamMode::ga2m)
                next_sel2(prev_sel2.rows() + i * d_out + k, j) = ref.sel2[j];
            }
          }
        }
        channel += cfg.trees_per_layer * d_out;
        prev_out = std::move(next_out);
        prev_sel1 = std::move(next_sel1);
        prev_sel2 = std::move(next_sel2);
      }
    }
  }
}
