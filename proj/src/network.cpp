#include "nodegam/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "nodegam/entmax.hpp"
#include "nodegam/errors.hpp"
#include "nodegam/kernels.hpp"
#include "nodegam/threadpool.hpp"

namespace nodegam {

void ModelConfig::validate() const {
  if (num_layers == 0) throw std::invalid_argument("config: num_layers must be >= 1");
  if (trees_per_layer == 0) throw std::invalid_argument("config: trees_per_layer must be >= 1");
  if (depth == 0) throw std::invalid_argument("config: depth must be >= 1");
  if (mode == GamMode::ga2m && depth < 2)
    throw std::invalid_argument("config: ga2m requires depth >= 2");
  if (num_features == 0) throw std::invalid_argument("config: num_features must be >= 1");
  if (num_outputs == 0) throw std::invalid_argument("config: num_outputs must be >= 1");
  if (colsample <= 0.0 || colsample > 1.0)
    throw std::invalid_argument("config: colsample must be in (0, 1]");
  if (output_dropout < 0.0 || output_dropout >= 1.0)
    throw std::invalid_argument("config: output_dropout must be in [0, 1)");
  if (last_dropout < 0.0 || last_dropout >= 1.0)
    throw std::invalid_argument("config: last_dropout must be in [0, 1)");
  if (l2_lambda < 0.0) throw std::invalid_argument("config: l2_lambda must be >= 0");
  if (arch == Arch::attention && attention_dim == 0)
    throw std::invalid_argument("config: attention arch needs attention_dim > 0");
  if (min_temperature <= 0.0 || min_temperature >= 1.0)
    throw std::invalid_argument("config: min_temperature must be in (0, 1)");
}

double temperature(std::uint64_t step, std::uint64_t anneal_steps, double min_temperature) {
  if (step == 0) return 1.0;
  if (step > anneal_steps) return 0.0;
  return std::pow(min_temperature,
                  static_cast<double>(step) / static_cast<double>(anneal_steps));
}

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

NodeGamModel NodeGamModel::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  NodeGamModel model;
  model.cfg = cfg;

  LayerConfig lc;
  lc.mode = cfg.mode;
  lc.num_trees = cfg.trees_per_layer;
  lc.depth = cfg.depth;
  lc.response_dim = cfg.response_dim();
  lc.num_features = cfg.num_features;
  lc.colsample = cfg.colsample;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) model.layers.push_back(init_layer(lc, rng));

  model.attn_b.resize(cfg.num_layers);
  model.attn_c.resize(cfg.num_layers);
  if (cfg.arch == Arch::attention) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.attention_dim));
    for (std::size_t l = 1; l < cfg.num_layers; ++l) {
      model.attn_b[l] = Matrix(cfg.channels_before(l), cfg.attention_dim);
      model.attn_c[l] = Matrix(cfg.attention_dim, cfg.trees_per_layer);
      for (double& v : model.attn_b[l].flat()) v = rng.normal(0.0, scale);
      for (double& v : model.attn_c[l].flat()) v = rng.normal(0.0, scale);
    }
  }

  const std::size_t ch = cfg.total_channels();
  model.last_linear = Matrix(ch, cfg.num_outputs);
  model.w0.assign(cfg.num_outputs, 0.0);
  if (cfg.add_last_linear) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(ch));
    for (double& v : model.last_linear.flat()) v = rng.normal(0.0, scale);
  } else {
    // Reference mode: fixed average of every tree's first response channel.
    const double w = 1.0 / static_cast<double>(cfg.num_layers * cfg.trees_per_layer);
    const std::size_t d_out = cfg.response_dim();
    for (std::size_t c = 0; c < ch; ++c)
      if (c % d_out == 0)
        for (std::size_t o = 0; o < cfg.num_outputs; ++o) model.last_linear(c, o) = w;
  }
  return model;
}

std::vector<ParamBlock> NodeGamModel::param_blocks() {
  std::vector<ParamBlock> blocks;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    GamTreeLayer& layer = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    blocks.push_back({p + "selection_logits", layer.selection_logits.data(),
                      layer.selection_logits.size()});
    if (cfg.mode == GamMode::ga2m)
      blocks.push_back({p + "selection_logits2", layer.selection_logits2.data(),
                        layer.selection_logits2.size()});
    blocks.push_back({p + "thresholds", layer.thresholds.data(), layer.thresholds.size()});
    blocks.push_back({p + "log_slopes", layer.log_slopes.data(), layer.log_slopes.size()});
    blocks.push_back({p + "leaf_response", layer.leaf_response.data(),
                      layer.leaf_response.size()});
  }
  if (cfg.arch == Arch::attention) {
    for (std::size_t l = 1; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      blocks.push_back({p + "attn_b", attn_b[l].data(), attn_b[l].size()});
      blocks.push_back({p + "attn_c", attn_c[l].data(), attn_c[l].size()});
    }
  }
  if (cfg.add_last_linear) {
    blocks.push_back({"last_linear", last_linear.data(), last_linear.size()});
    blocks.push_back({"w0", w0.data(), w0.size()});
  }
  return blocks;
}

namespace {

struct ChannelRef {
  std::size_t layer;
  std::size_t tree;
};

ChannelRef channel_ref(const ModelConfig& cfg, std::size_t channel) {
  const std::size_t per_layer = cfg.trees_per_layer * cfg.response_dim();
  const std::size_t l = channel / per_layer;
  const std::size_t tree = (channel % per_layer) / cfg.response_dim();
  return {l, tree};
}

// Inverted index: for each feature, the previous channels whose selection
// puts mass on it. Built once per step per layer; keeps gate computation
// proportional to actual selection sparsity.
struct SelectionIndex {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> by_feature;

  void build(const ModelConfig& cfg, const ForwardTrace& trace, std::size_t upto_layer,
             bool second) {
    by_feature.assign(cfg.num_features, {});
    const std::size_t d_out = cfg.response_dim();
    std::uint32_t channel = 0;
    for (std::size_t l = 0; l < upto_layer; ++l) {
      const Matrix& sel = second ? trace.layers[l].sel2 : trace.layers[l].sel1;
      for (std::size_t t = 0; t < cfg.trees_per_layer; ++t) {
        for (std::size_t k = 0; k < d_out; ++k, ++channel)
          for (std::size_t j = 0; j < cfg.num_features; ++j)
            if (sel(t, j) > 0.0) by_feature[j].push_back({channel, sel(t, j)});
      }
    }
  }
};

std::span<const double> sel_row(const ForwardTrace& trace, const ModelConfig& cfg,
                                std::size_t channel, bool second) {
  const ChannelRef ref = channel_ref(cfg, channel);
  const Matrix& sel = second ? trace.layers[ref.layer].sel2 : trace.layers[ref.layer].sel1;
  return sel.row(ref.tree);
}

// Sparse gate accumulator with touched-entry reset.
struct GateScratch {
  std::vector<double> a, b, c, d;
  std::vector<std::uint32_t> touched;
  std::vector<std::uint8_t> seen;

  void resize(std::size_t n) {
    a.assign(n, 0.0);
    b.assign(n, 0.0);
    c.assign(n, 0.0);
    d.assign(n, 0.0);
    seen.assign(n, 0);
    touched.clear();
  }
  void mark(std::uint32_t p) {
    if (!seen[p]) {
      seen[p] = 1;
      touched.push_back(p);
    }
  }
  void reset() {
    for (std::uint32_t p : touched) {
      a[p] = b[p] = c[p] = d[p] = 0.0;
      seen[p] = 0;
    }
    touched.clear();
  }
};

void accumulate_dots(const SelectionIndex& index, std::span<const double> sel,
                     std::vector<double>& out, GateScratch& scratch) {
  for (std::size_t j = 0; j < sel.size(); ++j) {
    if (sel[j] == 0.0) continue;
    const double v = sel[j];
    for (const auto& [p, w] : index.by_feature[j]) {
      scratch.mark(p);
      out[p] += v * w;
    }
  }
}

// Attention logits for one tree at the open gates: A[:, tree] = B * C[:, tree]
// evaluated only where needed.
void attention_logits_at(const Matrix& b, const Matrix& c, std::size_t tree,
                         std::span<const std::uint32_t> open, std::vector<double>& out) {
  const std::size_t e_dim = c.rows();
  std::vector<double> c_col(e_dim);
  for (std::size_t e = 0; e < e_dim; ++e) c_col[e] = c(e, tree);
  out.resize(open.size());
  const auto& K = kernels::ops();
  for (std::size_t t = 0; t < open.size(); ++t)
    out[t] = K.dot(b.row(open[t]).data(), c_col.data(), e_dim);
}

// Builds the mixing trace of one tree over the open gates. The compact
// entmax here matches mix_weights() exactly (closed gates are excluded
// rather than carried as -inf logits).
TreeMixTrace build_mix(std::vector<double> g_open, std::vector<std::uint32_t> open,
                       const std::vector<double>* attention) {
  TreeMixTrace mix;
  mix.open = std::move(open);
  mix.g_open = std::move(g_open);
  for (double g : mix.g_open) mix.g_sum += g;

  if (attention == nullptr) {
    if (mix.g_sum < 1e-12) return mix;
    mix.mix.idx = mix.open;
    mix.mix.val.resize(mix.g_open.size());
    for (std::size_t t = 0; t < mix.g_open.size(); ++t)
      mix.mix.val[t] = mix.g_open[t] / mix.g_sum;
    return mix;
  }

  if (mix.open.empty()) return mix;
  std::vector<double> z(mix.open.size());
  for (std::size_t t = 0; t < mix.open.size(); ++t)
    z[t] = std::log(mix.g_open[t]) + (*attention)[t];
  const std::vector<double> att = entmax15(z, 1.0);
  for (std::size_t t = 0; t < mix.open.size(); ++t) {
    if (att[t] > 0.0) {
      mix.supp.push_back(static_cast<std::uint32_t>(t));  // index into open
      mix.ent.push_back(att[t]);
      mix.mix.idx.push_back(mix.open[t]);
      mix.mix.val.push_back(mix.g_open[t] * att[t]);
    }
  }
  return mix;
}

double quantile_of_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

ForwardTrace NodeGamModel::forward_trace(const Matrix& x, double temp, bool training,
                                         Rng* rng, bool init_thresholds) {
  const std::size_t n = x.rows();
  const std::size_t D = cfg.num_features;
  if (x.cols() != D)
    throw std::invalid_argument("forward: expected " + std::to_string(D) + " features, got " +
                                std::to_string(x.cols()));
  if (!x.all_finite()) throw numeric_error("forward: non-finite input");

  const auto& K = kernels::ops();
  const std::size_t I = cfg.trees_per_layer;
  const std::size_t C = cfg.depth;
  const std::size_t d_out = cfg.response_dim();
  const std::size_t leaves = std::size_t{1} << C;
  const bool ga2m = cfg.mode == GamMode::ga2m;
  const bool attention = cfg.arch == Arch::attention;

  ForwardTrace trace;
  trace.temperature = temp;
  trace.training = training;
  trace.batch = n;
  trace.x_cols.assign(D * n, 0.0);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t j = 0; j < D; ++j) trace.x_cols[j * n + row] = x(row, j);
  trace.layers.resize(cfg.num_layers);
  trace.xp.assign(cfg.total_channels() * n, 0.0);

  GateScratch gates;
  SelectionIndex index1, index2;

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    GamTreeLayer& layer = layers[l];
    LayerTrace& lt = trace.layers[l];
    const std::size_t prev_channels = cfg.channels_before(l);

    // --- selections (batch-independent) ---
    lt.sel1 = Matrix(I, D);
    if (ga2m) lt.sel2 = Matrix(I, D);
    for (std::size_t i = 0; i < I; ++i) {
      const auto g1 = choice(layer.selection_logits.row(i), layer.allowed_row(i), temp);
      std::copy(g1.begin(), g1.end(), lt.sel1.row(i).begin());
      if (ga2m) {
        const auto g2 = choice(layer.selection_logits2.row(i), layer.allowed_row(i), temp);
        std::copy(g2.begin(), g2.end(), lt.sel2.row(i).begin());
      }
    }

    // --- gates and previous-output mixing weights ---
    if (l > 0) {
      lt.mixes.resize(I);
      index1.build(cfg, trace, l, false);
      if (ga2m) index2.build(cfg, trace, l, true);
      gates.resize(prev_channels);
      std::vector<double> attn;
      for (std::size_t i = 0; i < I; ++i) {
        std::vector<std::uint32_t> open;
        std::vector<double> g_open;
        if (!ga2m) {
          accumulate_dots(index1, lt.sel1.row(i), gates.a, gates);
          std::sort(gates.touched.begin(), gates.touched.end());
          for (std::uint32_t p : gates.touched) {
            if (gates.a[p] > 0.0) {
              open.push_back(p);
              g_open.push_back(gates.a[p]);
            }
          }
        } else {
          accumulate_dots(index1, lt.sel1.row(i), gates.a, gates);
          accumulate_dots(index2, lt.sel2.row(i), gates.b, gates);
          accumulate_dots(index2, lt.sel1.row(i), gates.c, gates);
          accumulate_dots(index1, lt.sel2.row(i), gates.d, gates);
          std::sort(gates.touched.begin(), gates.touched.end());
          for (std::uint32_t p : gates.touched) {
            const double q = gates.a[p] * gates.b[p] + gates.c[p] * gates.d[p];
            if (q > 0.0) {
              open.push_back(p);
              g_open.push_back(std::min(q, 1.0));
            }
          }
        }
        TreeMixTrace mix;
        if (attention) {
          attention_logits_at(attn_b[l], attn_c[l], i, open, attn);
          mix = build_mix(std::move(g_open), std::move(open), &attn);
        } else {
          mix = build_mix(std::move(g_open), std::move(open), nullptr);
        }
        if (ga2m) {
          mix.capped.resize(mix.open.size());
          mix.dots_a.resize(mix.open.size());
          mix.dots_b.resize(mix.open.size());
          mix.dots_c.resize(mix.open.size());
          mix.dots_d.resize(mix.open.size());
          for (std::size_t t = 0; t < mix.open.size(); ++t) {
            const std::uint32_t p = mix.open[t];
            mix.dots_a[t] = gates.a[p];
            mix.dots_b[t] = gates.b[p];
            mix.dots_c[t] = gates.c[p];
            mix.dots_d[t] = gates.d[p];
            mix.capped[t] = gates.a[p] * gates.b[p] + gates.c[p] * gates.d[p] >= 1.0;
          }
        }
        lt.mixes[i] = std::move(mix);
        gates.reset();
      }

      // Pack trees that share an open-gate set (same feature / feature pair
      // after annealing) into dense weight blocks; the batch passes then run
      // as register-tiled GEMMs instead of per-tree strided updates.
      std::map<std::vector<std::uint32_t>, std::vector<std::uint32_t>> by_open;
      for (std::size_t i = 0; i < I; ++i)
        if (!lt.mixes[i].mix.idx.empty()) by_open[lt.mixes[i].open].push_back(i);
      lt.tree_group.assign(I, -1);
      lt.tree_group_row.assign(I, 0);
      for (auto& [open_set, trees] : by_open) {
        if (trees.size() < 2) {
          for (std::uint32_t i : trees) lt.mix_singles.push_back(i);
          continue;
        }
        MixGroup grp;
        grp.trees = trees;
        grp.channels = open_set;
        grp.weights.assign(trees.size() * open_set.size(), 0.0);
        for (std::size_t r = 0; r < trees.size(); ++r) {
          const MixWeights& mix = lt.mixes[trees[r]].mix;
          std::size_t c = 0;
          for (std::size_t t = 0; t < mix.idx.size(); ++t) {
            while (grp.channels[c] != mix.idx[t]) ++c;
            grp.weights[r * open_set.size() + c] = mix.val[t];
          }
          lt.tree_group[trees[r]] = static_cast<std::int32_t>(lt.mix_groups.size());
          lt.tree_group_row[trees[r]] = static_cast<std::uint32_t>(r);
        }
        lt.mix_groups.push_back(std::move(grp));
      }
    }

    // --- mixed scalars K (pass 1, parallel over rows) ---
    lt.k1.assign(I * n, 0.0);
    if (ga2m) lt.k2.assign(I * n, 0.0);
    parallel_for(n, [&](std::size_t r0, std::size_t r1, std::size_t) {
      const std::size_t len = r1 - r0;
      for (std::size_t i = 0; i < I; ++i) {
        double* k1 = lt.k1.data() + i * n + r0;
        for (std::size_t j = 0; j < D; ++j) {
          const double v = lt.sel1(i, j);
          if (v != 0.0) K.axpy(v, trace.x_cols.data() + j * n + r0, k1, len);
        }
        if (ga2m) {
          double* k2 = lt.k2.data() + i * n + r0;
          for (std::size_t j = 0; j < D; ++j) {
            const double v = lt.sel2(i, j);
            if (v != 0.0) K.axpy(v, trace.x_cols.data() + j * n + r0, k2, len);
          }
        }
      }
      if (l > 0) {
        std::vector<const double*> b_rows;
        std::vector<double*> c_rows;
        std::vector<double> temp;
        for (const MixGroup& grp : lt.mix_groups) {
          const std::size_t u = grp.channels.size();
          b_rows.resize(u);
          for (std::size_t k = 0; k < u; ++k)
            b_rows[k] = trace.xp.data() + std::size_t{grp.channels[k]} * n + r0;
          if (!ga2m) {
            c_rows.resize(grp.trees.size());
            for (std::size_t r = 0; r < grp.trees.size(); ++r)
              c_rows[r] = lt.k1.data() + std::size_t{grp.trees[r]} * n + r0;
            K.mix_fwd(grp.weights.data(), grp.trees.size(), u, b_rows.data(), len,
                      c_rows.data());
          } else {
            // Both mixed scalars receive the same sum: compute once into a
            // slab, then add to K1 and K2.
            constexpr std::size_t kSlab = 16;
            for (std::size_t s0 = 0; s0 < grp.trees.size(); s0 += kSlab) {
              const std::size_t tb = std::min(kSlab, grp.trees.size() - s0);
              temp.assign(tb * len, 0.0);
              c_rows.resize(tb);
              for (std::size_t r = 0; r < tb; ++r) c_rows[r] = temp.data() + r * len;
              K.mix_fwd(grp.weights.data() + s0 * u, tb, u, b_rows.data(), len,
                        c_rows.data());
              for (std::size_t r = 0; r < tb; ++r) {
                const std::size_t i = grp.trees[s0 + r];
                K.axpy(1.0, c_rows[r], lt.k1.data() + i * n + r0, len);
                K.axpy(1.0, c_rows[r], lt.k2.data() + i * n + r0, len);
              }
            }
          }
        }
        for (const std::uint32_t i : lt.mix_singles) {
          const MixWeights& mix = lt.mixes[i].mix;
          double* k1 = lt.k1.data() + std::size_t{i} * n + r0;
          double* k2 = ga2m ? lt.k2.data() + std::size_t{i} * n + r0 : nullptr;
          for (std::size_t t = 0; t < mix.idx.size(); ++t) {
            const double* src = trace.xp.data() + std::size_t{mix.idx[t]} * n + r0;
            K.axpy(mix.val[t], src, k1, len);
            if (ga2m) K.axpy(mix.val[t], src, k2, len);
          }
        }
      }
    });

    // --- data-dependent threshold init (first training batch) ---
    if (init_thresholds && !layer.thresholds_ready) {
      if (rng == nullptr) throw std::invalid_argument("forward: threshold init needs rng");
      std::vector<double> sorted1(n), sorted2;
      for (std::size_t i = 0; i < I; ++i) {
        std::copy(lt.k1.begin() + i * n, lt.k1.begin() + (i + 1) * n, sorted1.begin());
        std::sort(sorted1.begin(), sorted1.end());
        if (ga2m) {
          sorted2.assign(lt.k2.begin() + i * n, lt.k2.begin() + (i + 1) * n);
          std::sort(sorted2.begin(), sorted2.end());
        }
        for (std::size_t c = 0; c < C; ++c) {
          const auto& sorted = (ga2m && c % 2 == 1) ? sorted2 : sorted1;
          layer.thresholds(i, c) = quantile_of_sorted(sorted, rng->uniform());
        }
      }
      layer.thresholds_ready = true;
    }

    // --- dropout mask on tree outputs (serial draw, fixed order) ---
    const bool use_p1 = training && cfg.output_dropout > 0.0;
    if (use_p1) {
      if (rng == nullptr) throw std::invalid_argument("forward: dropout needs rng");
      lt.p1_mask = dropout_mask(layer.channels() * n, cfg.output_dropout, *rng);
    }

    // --- split responses and leaf mixing (pass 2, parallel over rows) ---
    const std::size_t channel_base = cfg.channels_before(l);
    parallel_for(n, [&](std::size_t r0, std::size_t r1, std::size_t) {
      const std::size_t len = r1 - r0;
      std::vector<double> u(len), h(C * len), omh(C * len), e(len);
      for (std::size_t i = 0; i < I; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
          const double* k = (ga2m && c % 2 == 1) ? lt.k2.data() : lt.k1.data();
          k += i * n + r0;
          const double b = layer.thresholds(i, c);
          const double inv_s = std::exp(-layer.log_slopes(i, c));
          for (std::size_t r = 0; r < len; ++r) u[r] = (k[r] - b) * inv_s;
          K.entmoid(u.data(), h.data() + c * len, len);
          for (std::size_t r = 0; r < len; ++r) omh[c * len + r] = 1.0 - h[c * len + r];
        }
        double* out0 = trace.xp.data() + (channel_base + i * d_out) * n + r0;
        for (std::size_t lam = 0; lam < leaves; ++lam) {
          K.fill(e.data(), 1.0, len);
          for (std::size_t c = 0; c < C; ++c) {
            const bool flip = (lam >> (C - 1 - c)) & 1u;
            K.vmul_inplace(e.data(), (flip ? omh.data() : h.data()) + c * len, len);
          }
          for (std::size_t k2 = 0; k2 < d_out; ++k2)
            K.axpy(layer.leaf_response(i, lam * d_out + k2), e.data(), out0 + k2 * n, len);
        }
        if (use_p1) {
          for (std::size_t k2 = 0; k2 < d_out; ++k2)
            K.vmul_inplace(out0 + k2 * n, lt.p1_mask.data() + (i * d_out + k2) * n + r0, len);
        }
      }
    });
  }

  // --- last linear layer ---
  const std::size_t ch = cfg.total_channels();
  const std::size_t O = cfg.num_outputs;
  const bool use_p2 = training && cfg.add_last_linear && cfg.last_dropout > 0.0;
  if (use_p2) {
    if (rng == nullptr) throw std::invalid_argument("forward: dropout needs rng");
    trace.wl_mask = dropout_mask(last_linear.size(), cfg.last_dropout, *rng);
  }
  trace.response = Matrix(n, O);
  parallel_for(n, [&](std::size_t r0, std::size_t r1, std::size_t) {
    const std::size_t len = r1 - r0;
    std::vector<double> acc(O * len, 0.0);
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = trace.xp.data() + c * n + r0;
      for (std::size_t o = 0; o < O; ++o) {
        double w = last_linear(c, o);
        if (use_p2) w *= trace.wl_mask[c * O + o];
        if (w != 0.0) K.axpy(w, src, acc.data() + o * len, len);
      }
    }
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t o = 0; o < O; ++o)
        trace.response(r0 + r, o) = acc[o * len + r] + w0[o] + output_bias;
  });
  return trace;
}

ForwardResult NodeGamModel::forward(const Matrix& x, bool training, Rng* rng) {
  ForwardTrace trace = forward_trace(x, current_temperature(), training, rng, false);
  ForwardResult res;
  res.response = std::move(trace.response);
  res.tree_outputs = Matrix(x.rows(), cfg.total_channels());
  for (std::size_t c = 0; c < cfg.total_channels(); ++c)
    for (std::size_t r = 0; r < x.rows(); ++r)
      res.tree_outputs(r, c) = trace.xp[c * x.rows() + r];
  return res;
}

Matrix NodeGamModel::predict(const Matrix& x) const {
  constexpr std::size_t kBlock = 2048;
  if (x.rows() > 0 && x.cols() != cfg.num_features)
    throw std::invalid_argument("predict: feature count mismatch");
  Matrix out(x.rows(), cfg.num_outputs);
  // forward_trace only mutates the model when initializing thresholds.
  NodeGamModel& self = const_cast<NodeGamModel&>(*this);
  for (std::size_t r0 = 0; r0 < x.rows(); r0 += kBlock) {
    const std::size_t r1 = std::min(r0 + kBlock, x.rows());
    Matrix block(r1 - r0, x.cols());
    for (std::size_t r = r0; r < r1; ++r)
      std::copy(x.row(r).begin(), x.row(r).end(), block.row(r - r0).begin());
    ForwardTrace trace = self.forward_trace(block, current_temperature(), false, nullptr, false);
    for (std::size_t r = 0; r < r1 - r0; ++r)
      std::copy(trace.response.row(r).begin(), trace.response.row(r).end(),
                out.row(r0 + r).begin());
  }
  return out;
}

Matrix NodeGamModel::predict_probability(const Matrix& x) const {
  Matrix scores = predict(x);
  for (double& v : scores.flat()) v = sigmoid(v);
  return scores;
}

std::vector<std::array<std::size_t, 2>> NodeGamModel::dependency_report() const {
  if (!annealed())
    throw invalid_state_error("dependency_report: temperature schedule not finished");
  std::vector<std::array<std::size_t, 2>> deps;
  deps.reserve(cfg.num_layers * cfg.trees_per_layer);
  auto hard_argmax = [&](const GamTreeLayer& layer, const Matrix& logits, std::size_t tree) {
    const auto probs = choice(logits.row(tree), layer.allowed_row(tree), 0.0);
    for (std::size_t j = 0; j < probs.size(); ++j)
      if (probs[j] == 1.0) return j;
    return std::size_t{0};
  };
  for (const GamTreeLayer& layer : layers) {
    for (std::size_t i = 0; i < cfg.trees_per_layer; ++i) {
      const std::size_t a = hard_argmax(layer, layer.selection_logits, i);
      std::size_t b = a;
      if (cfg.mode == GamMode::ga2m) b = hard_argmax(layer, layer.selection_logits2, i);
      deps.push_back({std::min(a, b), std::max(a, b)});
    }
  }
  return deps;
}

void NodeGamModel::reset_head(std::size_t num_outputs, Rng& rng) {
  if (!cfg.add_last_linear)
    throw invalid_state_error("reset_head: model has no trainable last linear layer");
  cfg.num_outputs = num_outputs;
  const std::size_t ch = cfg.total_channels();
  last_linear = Matrix(ch, num_outputs);
  const double scale = 1.0 / std::sqrt(static_cast<double>(ch));
  for (double& v : last_linear.flat()) v = rng.normal(0.0, scale);
  w0.assign(num_outputs, 0.0);
}

Gradients NodeGamModel::backward(const ForwardTrace& trace, const Matrix& response_grad,
                                 double penalty_coef) {
  const std::size_t n = trace.batch;
  const std::size_t D = cfg.num_features;
  const std::size_t I = cfg.trees_per_layer;
  const std::size_t C = cfg.depth;
  const std::size_t d_out = cfg.response_dim();
  const std::size_t leaves = std::size_t{1} << C;
  const std::size_t ch = cfg.total_channels();
  const std::size_t O = cfg.num_outputs;
  const bool ga2m = cfg.mode == GamMode::ga2m;
  const bool attention = cfg.arch == Arch::attention;
  if (response_grad.rows() != n || response_grad.cols() != O)
    throw std::invalid_argument("backward: response gradient shape mismatch");

  const auto& K = kernels::ops();
  auto blocks = param_blocks();
  Gradients grads;
  grads.by_block.resize(blocks.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) grads.by_block[b].assign(blocks[b].size, 0.0);
  auto block_of = [&](const std::string& name) -> std::vector<double>& {
    for (std::size_t b = 0; b < blocks.size(); ++b)
      if (blocks[b].name == name) return grads.by_block[b];
    throw std::logic_error("backward: unknown block " + name);
  };

  // dL/dR transposed to columns.
  std::vector<double> dr_cols(O * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < O; ++o) dr_cols[o * n + r] = response_grad(r, o);

  // --- last linear layer ---
  std::vector<double> dxp(ch * n, 0.0);
  const bool use_p2 = trace.training && cfg.add_last_linear && !trace.wl_mask.empty();
  if (cfg.add_last_linear) {
    std::vector<double>& d_wl = block_of("last_linear");
    std::vector<double>& d_w0 = block_of("w0");
    for (std::size_t o = 0; o < O; ++o) d_w0[o] = K.sum(dr_cols.data() + o * n, n);
    for (std::size_t c = 0; c < ch; ++c) {
      const double* xp_c = trace.xp.data() + c * n;
      for (std::size_t o = 0; o < O; ++o) {
        const double mask = use_p2 ? trace.wl_mask[c * O + o] : 1.0;
        if (mask != 0.0)
          d_wl[c * O + o] = mask * K.dot(xp_c, dr_cols.data() + o * n, n);
      }
    }
  }
  parallel_for(n, [&](std::size_t r0, std::size_t r1, std::size_t) {
    const std::size_t len = r1 - r0;
    for (std::size_t c = 0; c < ch; ++c) {
      double* dst = dxp.data() + c * n + r0;
      for (std::size_t o = 0; o < O; ++o) {
        double w = last_linear(c, o);
        if (use_p2) w *= trace.wl_mask[c * O + o];
        if (w != 0.0) K.axpy(w, dr_cols.data() + o * n + r0, dst, len);
      }
      if (penalty_coef != 0.0) K.axpy(penalty_coef, trace.xp.data() + c * n + r0, dst, len);
    }
  });

  // Selection gradients accumulated per channel from later layers' gates.
  std::vector<double> d_sel_prev1(ch * D, 0.0);
  std::vector<double> d_sel_prev2(ga2m ? ch * D : 0, 0.0);

  struct LayerPartial {
    std::vector<double> leaf, thr, slo, sel1, sel2, mix, group_grad;
  };

  for (std::size_t li = cfg.num_layers; li-- > 0;) {
    const GamTreeLayer& layer = layers[li];
    const LayerTrace& lt = trace.layers[li];
    const std::size_t channel_base = cfg.channels_before(li);
    const bool use_p1 = trace.training && !lt.p1_mask.empty();
    const bool want_sel = trace.temperature > 0.0;

    // Mix gradient slots: flat per-tree buffers for the sparse path, dense
    // [trees x channels] blocks per group for the GEMM path.
    std::vector<std::size_t> mix_offset(I + 1, 0);
    std::vector<std::size_t> group_grad_offset(lt.mix_groups.size() + 1, 0);
    if (li > 0) {
      for (std::size_t i = 0; i < I; ++i)
        mix_offset[i + 1] = mix_offset[i] + lt.mixes[i].mix.idx.size();
      for (std::size_t g = 0; g < lt.mix_groups.size(); ++g)
        group_grad_offset[g + 1] =
            group_grad_offset[g] +
            lt.mix_groups[g].trees.size() * lt.mix_groups[g].channels.size();
    }

    const std::size_t chunks = parallel_chunks(n);
    std::vector<LayerPartial> partials(chunks);

    parallel_for(n, [&](std::size_t r0, std::size_t r1, std::size_t chunk) {
      const std::size_t len = r1 - r0;
      LayerPartial& part = partials[chunk];
      part.leaf.assign(I * leaves * d_out, 0.0);
      part.thr.assign(I * C, 0.0);
      part.slo.assign(I * C, 0.0);
      part.sel1.assign(want_sel ? I * D : 0, 0.0);
      part.sel2.assign(want_sel && ga2m ? I * D : 0, 0.0);
      part.mix.assign(mix_offset[I], 0.0);
      part.group_grad.assign(group_grad_offset[lt.mix_groups.size()], 0.0);

      std::vector<double> dk_store(li > 0 ? I * len : 0);
      std::vector<double> u(C * len), h(C * len), omh(C * len), eg(C * len);
      std::vector<double> dh(d_out * len), de(len), dhc(C * len), du(len);
      std::vector<double> dk1(len), dk2(len);
      std::vector<double> prefix((C + 1) * len), suffix((C + 1) * len);

      for (std::size_t i = 0; i < I; ++i) {
        // Upstream gradient of the raw tree outputs (undo output dropout).
        for (std::size_t k2 = 0; k2 < d_out; ++k2) {
          const double* src = dxp.data() + (channel_base + i * d_out + k2) * n + r0;
          double* dst = dh.data() + k2 * len;
          std::copy(src, src + len, dst);
          if (use_p1)
            K.vmul_inplace(dst, lt.p1_mask.data() + (i * d_out + k2) * n + r0, len);
        }

        // Recompute split activations from the stored mixed scalars.
        for (std::size_t c = 0; c < C; ++c) {
          const double* k = (ga2m && c % 2 == 1) ? lt.k2.data() : lt.k1.data();
          k += i * n + r0;
          const double b = layer.thresholds(i, c);
          const double inv_s = std::exp(-layer.log_slopes(i, c));
          double* uc = u.data() + c * len;
          for (std::size_t r = 0; r < len; ++r) uc[r] = (k[r] - b) * inv_s;
          K.entmoid(uc, h.data() + c * len, len);
          K.entmoid_grad(uc, eg.data() + c * len, len);
          for (std::size_t r = 0; r < len; ++r) omh[c * len + r] = 1.0 - h[c * len + r];
        }

        // Leaf backward: dW, dH via prefix/suffix products (no division, so
        // saturated factors are safe).
        K.fill(dhc.data(), 0.0, C * len);
        for (std::size_t lam = 0; lam < leaves; ++lam) {
          K.fill(prefix.data(), 1.0, len);
          for (std::size_t c = 0; c < C; ++c) {
            const bool flip = (lam >> (C - 1 - c)) & 1u;
            K.vmul(prefix.data() + c * len, (flip ? omh.data() : h.data()) + c * len,
                   prefix.data() + (c + 1) * len, len);
          }
          K.fill(suffix.data() + C * len, 1.0, len);
          for (std::size_t c = C; c-- > 0;) {
            const bool flip = (lam >> (C - 1 - c)) & 1u;
            K.vmul(suffix.data() + (c + 1) * len, (flip ? omh.data() : h.data()) + c * len,
                   suffix.data() + c * len, len);
          }
          const double* e_lam = prefix.data() + C * len;
          K.fill(de.data(), 0.0, len);
          for (std::size_t k2 = 0; k2 < d_out; ++k2) {
            part.leaf[i * leaves * d_out + lam * d_out + k2] +=
                K.dot(e_lam, dh.data() + k2 * len, len);
            K.axpy(layer.leaf_response(i, lam * d_out + k2), dh.data() + k2 * len, de.data(), len);
          }
          for (std::size_t c = 0; c < C; ++c) {
            const bool flip = (lam >> (C - 1 - c)) & 1u;
            const double sign = flip ? -1.0 : 1.0;
            double* dst = dhc.data() + c * len;
            const double* pre = prefix.data() + c * len;
            const double* suf = suffix.data() + (c + 1) * len;
            for (std::size_t r = 0; r < len; ++r) dst[r] += sign * de[r] * pre[r] * suf[r];
          }
        }

        // Through the entmoid and the (K - b)/S affine map.
        K.fill(dk1.data(), 0.0, len);
        if (ga2m) K.fill(dk2.data(), 0.0, len);
        for (std::size_t c = 0; c < C; ++c) {
          const double inv_s = std::exp(-layer.log_slopes(i, c));
          K.vmul(dhc.data() + c * len, eg.data() + c * len, du.data(), len);
          part.thr[i * C + c] -= inv_s * K.sum(du.data(), len);
          part.slo[i * C + c] -= K.dot(du.data(), u.data() + c * len, len);
          double* dk = (ga2m && c % 2 == 1) ? dk2.data() : dk1.data();
          K.axpy(inv_s, du.data(), dk, len);
        }

        // Selection dot-product term dK * x_j.
        if (want_sel) {
          for (std::size_t j = 0; j < D; ++j) {
            if (lt.sel1(i, j) > 0.0)
              part.sel1[i * D + j] += K.dot(trace.x_cols.data() + j * n + r0, dk1.data(), len);
            if (ga2m && lt.sel2(i, j) > 0.0)
              part.sel2[i * D + j] += K.dot(trace.x_cols.data() + j * n + r0, dk2.data(), len);
          }
        }

        // Stash dK for the mixing backward (both mixed scalars receive the
        // same previous-output sum, so GA2M adds the two gradients).
        if (li > 0 && !lt.mixes[i].mix.idx.empty()) {
          double* dst = dk_store.data() + i * len;
          std::copy(dk1.begin(), dk1.end(), dst);
          if (ga2m) K.axpy(1.0, dk2.data(), dst, len);
        }
      }

      // Previous-output mixing backward: gradient to earlier channels and to
      // the mixing weights, group-GEMM where trees share an open set.
      if (li > 0) {
        std::vector<const double*> a_rows, b_rows;
        std::vector<double*> c_rows;
        for (std::size_t gi = 0; gi < lt.mix_groups.size(); ++gi) {
          const MixGroup& grp = lt.mix_groups[gi];
          const std::size_t u_ch = grp.channels.size();
          a_rows.resize(grp.trees.size());
          for (std::size_t r = 0; r < grp.trees.size(); ++r)
            a_rows[r] = dk_store.data() + std::size_t{grp.trees[r]} * len;
          b_rows.resize(u_ch);
          c_rows.resize(u_ch);
          for (std::size_t k = 0; k < u_ch; ++k) {
            b_rows[k] = trace.xp.data() + std::size_t{grp.channels[k]} * n + r0;
            c_rows[k] = dxp.data() + std::size_t{grp.channels[k]} * n + r0;
          }
          K.mix_bwd(grp.weights.data(), grp.trees.size(), u_ch, a_rows.data(), len,
                    c_rows.data());
          K.mix_grad(a_rows.data(), grp.trees.size(), b_rows.data(), u_ch, len,
                     part.group_grad.data() + group_grad_offset[gi]);
        }
        for (const std::uint32_t i : lt.mix_singles) {
          const MixWeights& mix = lt.mixes[i].mix;
          const double* dk_prev = dk_store.data() + std::size_t{i} * len;
          for (std::size_t t = 0; t < mix.idx.size(); ++t) {
            const std::size_t p = mix.idx[t];
            K.axpy(mix.val[t], dk_prev, dxp.data() + p * n + r0, len);
            part.mix[mix_offset[i] + t] +=
                K.dot(trace.xp.data() + p * n + r0, dk_prev, len);
          }
        }
      }
    });

    // Reduce chunk partials in a fixed order.
    const std::string pre = "layer" + std::to_string(li) + ".";
    std::vector<double>& d_leaf = block_of(pre + "leaf_response");
    std::vector<double>& d_thr = block_of(pre + "thresholds");
    std::vector<double>& d_slo = block_of(pre + "log_slopes");
    std::vector<double> d_sel1(I * D, 0.0), d_sel2(ga2m ? I * D : 0, 0.0);
    std::vector<double> d_mix(mix_offset[I], 0.0);
    std::vector<double> d_group(group_grad_offset[lt.mix_groups.size()], 0.0);
    for (const LayerPartial& part : partials) {
      for (std::size_t t = 0; t < d_leaf.size(); ++t) d_leaf[t] += part.leaf[t];
      for (std::size_t t = 0; t < d_thr.size(); ++t) d_thr[t] += part.thr[t];
      for (std::size_t t = 0; t < d_slo.size(); ++t) d_slo[t] += part.slo[t];
      for (std::size_t t = 0; t < part.sel1.size(); ++t) d_sel1[t] += part.sel1[t];
      for (std::size_t t = 0; t < part.sel2.size(); ++t) d_sel2[t] += part.sel2[t];
      for (std::size_t t = 0; t < part.mix.size(); ++t) d_mix[t] += part.mix[t];
      for (std::size_t t = 0; t < part.group_grad.size(); ++t)
        d_group[t] += part.group_grad[t];
    }

    // Serial phase: mixing-weight gradients into gates, attention factors and
    // selection vectors.
    const bool want_gates = li > 0;
    if (want_gates) {
      std::vector<double> c_col(attention ? cfg.attention_dim : 0);
      std::vector<double>* d_b = attention ? &block_of(pre + "attn_b") : nullptr;
      std::vector<double>* d_c = attention ? &block_of(pre + "attn_c") : nullptr;
      std::vector<double> dval_buf;
      for (std::size_t i = 0; i < I; ++i) {
        const TreeMixTrace& mix = lt.mixes[i];
        const std::size_t m = mix.mix.idx.size();
        if (m == 0) continue;
        const double* dval;
        if (lt.tree_group[i] >= 0) {
          const MixGroup& grp = lt.mix_groups[static_cast<std::size_t>(lt.tree_group[i])];
          const double* dense =
              d_group.data() + group_grad_offset[static_cast<std::size_t>(lt.tree_group[i])] +
              std::size_t{lt.tree_group_row[i]} * grp.channels.size();
          dval_buf.resize(m);
          std::size_t c = 0;
          for (std::size_t t = 0; t < m; ++t) {
            while (grp.channels[c] != mix.mix.idx[t]) ++c;
            dval_buf[t] = dense[c];
          }
          dval = dval_buf.data();
        } else {
          dval = d_mix.data() + mix_offset[i];
        }

        // Gate gradients, indexed like mix.open.
        std::vector<double> dg(mix.open.size(), 0.0);
        if (!attention) {
          double inner = 0.0;
          for (std::size_t t = 0; t < m; ++t) inner += dval[t] * mix.mix.val[t];
          for (std::size_t t = 0; t < m; ++t) dg[t] = (dval[t] - inner) / mix.g_sum;
        } else {
          std::vector<double> dent(m);
          for (std::size_t t = 0; t < m; ++t) {
            const std::size_t ot = mix.supp[t];
            dent[t] = dval[t] * mix.g_open[ot];
            dg[ot] += dval[t] * mix.ent[t];  // direct product term
          }
          const std::vector<double> dz = entmax15_vjp(mix.ent, dent);
          for (std::size_t e = 0; e < cfg.attention_dim; ++e) c_col[e] = attn_c[li](e, i);
          for (std::size_t t = 0; t < m; ++t) {
            if (dz[t] == 0.0) continue;
            const std::size_t ot = mix.supp[t];
            const std::size_t p = mix.open[ot];
            const double* b_row = attn_b[li].row(p).data();
            for (std::size_t e = 0; e < cfg.attention_dim; ++e) {
              (*d_b)[p * cfg.attention_dim + e] += dz[t] * c_col[e];
              (*d_c)[e * I + i] += dz[t] * b_row[e];
            }
            dg[ot] += dz[t] / mix.g_open[ot];  // through log(g)
          }
        }

        // Gates into selection vectors (only while selections are soft).
        if (want_sel) {
          for (std::size_t t = 0; t < mix.open.size(); ++t) {
            if (dg[t] == 0.0) continue;
            const std::size_t p = mix.open[t];
            if (!ga2m) {
              const auto prev = sel_row(trace, cfg, p, false);
              for (std::size_t j = 0; j < D; ++j) {
                if (prev[j] > 0.0) d_sel1[i * D + j] += dg[t] * prev[j];
                if (lt.sel1(i, j) > 0.0) d_sel_prev1[p * D + j] += dg[t] * lt.sel1(i, j);
              }
            } else {
              if (mix.capped[t]) continue;  // min(q, 1) clamps the gradient
              const double da = dg[t] * mix.dots_b[t];
              const double db = dg[t] * mix.dots_a[t];
              const double dc = dg[t] * mix.dots_d[t];
              const double dd = dg[t] * mix.dots_c[t];
              const auto prev1 = sel_row(trace, cfg, p, false);
              const auto prev2 = sel_row(trace, cfg, p, true);
              for (std::size_t j = 0; j < D; ++j) {
                d_sel1[i * D + j] += da * prev1[j] + dc * prev2[j];
                d_sel2[i * D + j] += db * prev2[j] + dd * prev1[j];
                d_sel_prev1[p * D + j] += da * lt.sel1(i, j) + dd * lt.sel2(i, j);
                d_sel_prev2[p * D + j] += db * lt.sel2(i, j) + dc * lt.sel1(i, j);
              }
            }
          }
        }
      }
    }

    // Selection gradients through the entmax (chain rule: divide by T).
    if (want_sel) {
      std::vector<double>& d_f1 = block_of(pre + "selection_logits");
      std::vector<double>* d_f2 = ga2m ? &block_of(pre + "selection_logits2") : nullptr;
      for (std::size_t i = 0; i < I; ++i) {
        // Later layers' gate contributions arrive per channel; the tree's
        // response channels share one selection row.
        for (std::size_t k2 = 0; k2 < d_out; ++k2) {
          const std::size_t p = channel_base + i * d_out + k2;
          for (std::size_t j = 0; j < D; ++j) {
            d_sel1[i * D + j] += d_sel_prev1[p * D + j];
            if (ga2m) d_sel2[i * D + j] += d_sel_prev2[p * D + j];
          }
        }
        const std::span<const double> sel1_row{lt.sel1.row(i).data(), D};
        const std::vector<double> vjp1 =
            entmax15_vjp(sel1_row, {d_sel1.data() + i * D, D});
        for (std::size_t j = 0; j < D; ++j)
          d_f1[i * D + j] = vjp1[j] / trace.temperature;
        if (ga2m) {
          const std::span<const double> sel2_row{lt.sel2.row(i).data(), D};
          const std::vector<double> vjp2 =
              entmax15_vjp(sel2_row, {d_sel2.data() + i * D, D});
          for (std::size_t j = 0; j < D; ++j)
            (*d_f2)[i * D + j] = vjp2[j] / trace.temperature;
        }
      }
    }
  }

  return grads;
}

}  // namespace nodegam
