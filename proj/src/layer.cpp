#include "nodegam/layer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "nodegam/entmax.hpp"
#include "nodegam/errors.hpp"

namespace nodegam {

std::size_t GamTreeLayer::allowed_count(std::size_t tree) const {
  auto row = allowed_row(tree);
  return static_cast<std::size_t>(std::count(row.begin(), row.end(), std::uint8_t{1}));
}

GamTreeLayer init_layer(const LayerConfig& cfg, Rng& rng) {
  if (cfg.colsample <= 0.0 || cfg.colsample > 1.0)
    throw std::invalid_argument("init_layer: colsample must be in (0, 1]");
  if (cfg.num_features == 0) throw std::invalid_argument("init_layer: needs >= 1 feature");
  if (cfg.num_trees == 0) throw std::invalid_argument("init_layer: needs >= 1 tree");
  if (cfg.depth == 0) throw std::invalid_argument("init_layer: depth must be >= 1");
  if (cfg.mode == GamMode::ga2m && cfg.depth < 2)
    throw std::invalid_argument("init_layer: ga2m needs depth >= 2");

  GamTreeLayer layer;
  layer.cfg = cfg;
  const std::size_t I = cfg.num_trees, D = cfg.num_features, C = cfg.depth;

  layer.allowed.assign(I * D, 1);
  if (cfg.colsample < 1.0) {
    const std::size_t keep = std::max<std::size_t>(
        static_cast<std::size_t>(std::ceil(static_cast<double>(D) * cfg.colsample)), 1);
    std::vector<std::size_t> perm(D);
    for (std::size_t i = 0; i < I; ++i) {
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (std::size_t j = keep; j < D; ++j) layer.allowed[i * D + perm[j]] = 0;
    }
  }

  layer.selection_logits = Matrix(I, D);
  for (std::size_t i = 0; i < I; ++i)
    for (std::size_t j = 0; j < D; ++j)
      layer.selection_logits(i, j) = layer.allowed[i * D + j] ? rng.normal() : 0.0;
  if (cfg.mode == GamMode::ga2m) {
    // Both selectors share the same subsample mask.
    layer.selection_logits2 = Matrix(I, D);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < D; ++j)
        layer.selection_logits2(i, j) = layer.allowed[i * D + j] ? rng.normal() : 0.0;
  }

  layer.thresholds = Matrix(I, C);      // filled from data quantiles later
  layer.log_slopes = Matrix(I, C);      // slope = exp(0) = 1
  const std::size_t resp = layer.leaves() * cfg.response_dim;
  layer.leaf_response = Matrix(I, resp);
  const double w_scale = 1.0 / std::sqrt(static_cast<double>(layer.leaves()));
  for (double& w : layer.leaf_response.flat()) w = rng.normal(0.0, w_scale);
  return layer;
}

std::vector<double> choice(std::span<const double> logits_row,
                           std::span<const std::uint8_t> allowed, double temperature) {
  // -inf logits behave exactly like masked-out features.
  std::vector<std::uint8_t> admissible(logits_row.size(), 1);
  bool any = false;
  for (std::size_t j = 0; j < logits_row.size(); ++j) {
    const bool ok = (allowed.empty() || allowed[j]) &&
                    logits_row[j] != -std::numeric_limits<double>::infinity();
    admissible[j] = ok ? 1 : 0;
    any = any || ok;
  }
  if (!any) throw invalid_state_error("choice: every feature is excluded");
  return entmax15_masked(logits_row, admissible, temperature);
}

std::vector<double> gam_gate(const Matrix& prev_selection, std::span<const double> sel) {
  if (prev_selection.cols() != sel.size())
    throw std::invalid_argument("gam_gate: dimension mismatch");
  std::vector<double> g(prev_selection.rows(), 0.0);
  for (std::size_t p = 0; p < prev_selection.rows(); ++p) {
    double acc = 0.0;
    const auto row = prev_selection.row(p);
    for (std::size_t j = 0; j < sel.size(); ++j) acc += row[j] * sel[j];
    g[p] = acc;
  }
  return g;
}

std::vector<double> ga2m_gate(std::span<const double> sel1, std::span<const double> sel2,
                              const Matrix& prev_sel1, const Matrix& prev_sel2) {
  if (prev_sel1.rows() != prev_sel2.rows() || prev_sel1.cols() != sel1.size() ||
      prev_sel2.cols() != sel2.size() || sel1.size() != sel2.size())
    throw std::invalid_argument("ga2m_gate: dimension mismatch");
  const std::size_t P = prev_sel1.rows(), D = sel1.size();
  std::vector<double> g(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    const auto r1 = prev_sel1.row(p);
    const auto r2 = prev_sel2.row(p);
    for (std::size_t j = 0; j < D; ++j) {
      a += sel1[j] * r1[j];
      b += sel2[j] * r2[j];
      c += sel1[j] * r2[j];
      d += sel2[j] * r1[j];
    }
    g[p] = std::min(a * b + c * d, 1.0);
  }
  return g;
}

MixWeights mix_weights(std::span<const double> gates,
                       std::span<const double> attention_logits) {
  MixWeights mix;
  constexpr double kGateEps = 1e-12;

  if (attention_logits.empty()) {
    double gsum = 0.0;
    for (double g : gates) gsum += g;
    if (gsum < kGateEps) return mix;  // no open gate: omit the previous-output term
    for (std::size_t p = 0; p < gates.size(); ++p) {
      if (gates[p] > 0.0) {
        mix.idx.push_back(static_cast<std::uint32_t>(p));
        mix.val.push_back(gates[p] / gsum);
      }
    }
    return mix;
  }

  if (attention_logits.size() != gates.size())
    throw std::invalid_argument("mix_weights: attention length mismatch");
  // Closed gates enter the entmax as -inf (log 0); the exclusion mask
  // realizes that exactly.
  std::vector<double> z(gates.size());
  std::vector<std::uint8_t> open(gates.size(), 0);
  bool any_open = false;
  for (std::size_t p = 0; p < gates.size(); ++p) {
    if (gates[p] > 0.0) {
      open[p] = 1;
      any_open = true;
      z[p] = std::log(gates[p]) + attention_logits[p];
    }
  }
  if (!any_open) return mix;
  const std::vector<double> att = entmax15_masked(z, open, 1.0);
  for (std::size_t p = 0; p < gates.size(); ++p) {
    const double w = gates[p] * att[p];
    if (w != 0.0) {
      mix.idx.push_back(static_cast<std::uint32_t>(p));
      mix.val.push_back(w);
    }
  }
  return mix;
}

namespace {

// Shared leaf pass: mix responses through the outer product of
// [H_c, 1-H_c] factors. Leaf lambda uses H_c when bit (depth-major) is 0.
void leaf_mix(const GamTreeLayer& layer, std::size_t tree,
              const std::vector<std::vector<double>>& h_per_depth, Matrix& out) {
  const std::size_t C = layer.cfg.depth;
  const std::size_t n = out.rows();
  const std::size_t d_out = layer.cfg.response_dim;
  const std::size_t leaves = layer.leaves();
  for (std::size_t row = 0; row < n; ++row) {
    for (std::size_t lam = 0; lam < leaves; ++lam) {
      double e = 1.0;
      for (std::size_t c = 0; c < C; ++c) {
        const bool flip = (lam >> (C - 1 - c)) & 1u;
        const double h = h_per_depth[c][row];
        e *= flip ? (1.0 - h) : h;
      }
      for (std::size_t k = 0; k < d_out; ++k)
        out(row, k) += e * layer.leaf_response(tree, lam * d_out + k);
    }
  }
}

std::vector<double> mixed_feature(const Matrix& x, std::span<const double> sel) {
  std::vector<double> k(x.rows(), 0.0);
  for (std::size_t j = 0; j < sel.size(); ++j) {
    if (sel[j] == 0.0) continue;
    for (std::size_t row = 0; row < x.rows(); ++row) k[row] += x(row, j) * sel[j];
  }
  return k;
}

void add_previous(std::vector<double>& k, const Matrix& prev_outputs, const MixWeights& mix) {
  for (std::size_t t = 0; t < mix.idx.size(); ++t) {
    const std::size_t p = mix.idx[t];
    const double w = mix.val[t];
    for (std::size_t row = 0; row < k.size(); ++row) k[row] += prev_outputs(row, p) * w;
  }
}

}  // namespace

TreeForwardResult tree_forward_gam(const Matrix& x, const GamTreeLayer& layer,
                                   std::size_t tree, double temperature,
                                   const PreviousOutputs* prev,
                                   std::span<const double> attention_logits) {
  if (x.cols() != layer.cfg.num_features)
    throw std::invalid_argument("tree_forward_gam: feature count mismatch");
  TreeForwardResult res;
  res.sel1 = choice(layer.selection_logits.row(tree), layer.allowed_row(tree), temperature);

  std::vector<double> k = mixed_feature(x, res.sel1);
  if (prev && prev->outputs && prev->outputs->cols() > 0) {
    if (prev->selection1->rows() != prev->outputs->cols())
      throw std::invalid_argument("tree_forward_gam: previous selection misaligned");
    const std::vector<double> g = gam_gate(*prev->selection1, res.sel1);
    const MixWeights mix = mix_weights(g, attention_logits);
    add_previous(k, *prev->outputs, mix);
  }

  const std::size_t C = layer.cfg.depth;
  std::vector<std::vector<double>> h(C, std::vector<double>(x.rows()));
  for (std::size_t c = 0; c < C; ++c) {
    const double b = layer.thresholds(tree, c);
    const double inv_s = std::exp(-layer.log_slopes(tree, c));
    for (std::size_t row = 0; row < x.rows(); ++row)
      h[c][row] = entmoid15((k[row] - b) * inv_s);
  }
  res.outputs = Matrix(x.rows(), layer.cfg.response_dim);
  leaf_mix(layer, tree, h, res.outputs);
  return res;
}

TreeForwardResult tree_forward_ga2m(const Matrix& x, const GamTreeLayer& layer,
                                    std::size_t tree, double temperature,
                                    const PreviousOutputs* prev,
                                    std::span<const double> attention_logits) {
  if (x.cols() != layer.cfg.num_features)
    throw std::invalid_argument("tree_forward_ga2m: feature count mismatch");
  if (layer.cfg.depth < 2)
    throw std::invalid_argument("tree_forward_ga2m: depth must be >= 2");
  TreeForwardResult res;
  res.sel1 = choice(layer.selection_logits.row(tree), layer.allowed_row(tree), temperature);
  res.sel2 = choice(layer.selection_logits2.row(tree), layer.allowed_row(tree), temperature);

  std::vector<double> k1 = mixed_feature(x, res.sel1);
  std::vector<double> k2 = mixed_feature(x, res.sel2);
  if (prev && prev->outputs && prev->outputs->cols() > 0) {
    const std::vector<double> g =
        ga2m_gate(res.sel1, res.sel2, *prev->selection1, *prev->selection2);
    const MixWeights mix = mix_weights(g, attention_logits);
    // Both mixed scalars receive the same gated sum.
    add_previous(k1, *prev->outputs, mix);
    add_previous(k2, *prev->outputs, mix);
  }

  const std::size_t C = layer.cfg.depth;
  std::vector<std::vector<double>> h(C, std::vector<double>(x.rows()));
  for (std::size_t c = 0; c < C; ++c) {
    // Depths 1, 3, ... use K1; depths 2, 4, ... use K2.
    const std::vector<double>& k = (c % 2 == 0) ? k1 : k2;
    const double b = layer.thresholds(tree, c);
    const double inv_s = std::exp(-layer.log_slopes(tree, c));
    for (std::size_t row = 0; row < x.rows(); ++row)
      h[c][row] = entmoid15((k[row] - b) * inv_s);
  }
  res.outputs = Matrix(x.rows(), layer.cfg.response_dim);
  leaf_mix(layer, tree, h, res.outputs);
  return res;
}

}  // namespace nodegam
