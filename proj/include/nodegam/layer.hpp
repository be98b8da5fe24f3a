#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nodegam/matrix.hpp"
#include "nodegam/rng.hpp"

namespace nodegam {

enum class GamMode { gam, ga2m };

struct LayerConfig {
  GamMode mode = GamMode::gam;
  std::size_t num_trees = 1;     // I
  std::size_t depth = 1;         // C
  std::size_t response_dim = 1;  // output channels per tree
  std::size_t num_features = 1;  // D
  double colsample = 1.0;        // fraction of features each tree may use
};

/// Parameters of one layer of differentiable oblivious decision trees.
/// Slopes are stored as logs so they stay strictly positive under
/// unconstrained optimization; thresholds are filled from data quantiles on
/// the first training batch and persisted with the model.
struct GamTreeLayer {
  LayerConfig cfg;
  Matrix selection_logits;   // [I x D]
  Matrix selection_logits2;  // [I x D], second selector (GA2M only, shares mask)
  Matrix thresholds;         // [I x C]
  Matrix log_slopes;         // [I x C]
  Matrix leaf_response;      // [I x 2^C * response_dim]
  std::vector<std::uint8_t> allowed;  // [I x D] column-subsample mask
  bool thresholds_ready = false;

  std::size_t leaves() const { return std::size_t{1} << cfg.depth; }
  std::size_t channels() const { return cfg.num_trees * cfg.response_dim; }
  std::span<const std::uint8_t> allowed_row(std::size_t tree) const {
    return {allowed.data() + tree * cfg.num_features, cfg.num_features};
  }
  std::size_t allowed_count(std::size_t tree) const;
};

/// Draws the column-subsample masks (each tree keeps max(ceil(D*eta), 1)
/// features) and initializes all trainable parameters.
GamTreeLayer init_layer(const LayerConfig& cfg, Rng& rng);

/// Feature-selection distribution of one tree: entmax15(F/T) restricted to
/// the allowed features; exact one-hot at T == 0. Throws invalid_state_error
/// if no feature is admissible.
std::vector<double> choice(std::span<const double> logits_row,
                           std::span<const std::uint8_t> allowed, double temperature);

/// Gate between a previous selection matrix [P x D] and one tree's selection
/// vector: g_p = <G_prev[p], G_i>. One-hot selections gate to exactly 0/1.
std::vector<double> gam_gate(const Matrix& prev_selection, std::span<const double> sel);

/// Pair gate: min over the two cross-matchings, capped at 1 so identical
/// degenerate pairs do not amplify.
std::vector<double> ga2m_gate(std::span<const double> sel1, std::span<const double> sel2,
                              const Matrix& prev_sel1, const Matrix& prev_sel2);

/// Previous layers' outputs plus their per-channel selection rows, as seen by
/// one tree of a later layer.
struct PreviousOutputs {
  const Matrix* outputs = nullptr;     // [batch x P]
  const Matrix* selection1 = nullptr;  // [P x D]
  const Matrix* selection2 = nullptr;  // [P x D] (GA2M)
};

struct TreeForwardResult {
  Matrix outputs;               // [batch x response_dim]
  std::vector<double> sel1;     // feature-selection distribution
  std::vector<double> sel2;     // second selector (GA2M)
};

/// Reference forward pass of a single GAM tree: pick one feature softly,
/// add the gate-normalized (or attention-weighted) sum of previous outputs,
/// split against C thresholds and mix the 2^C leaf responses. Used directly
/// by tests; the batched training engine computes the same function.
TreeForwardResult tree_forward_gam(const Matrix& x, const GamTreeLayer& layer,
                                   std::size_t tree, double temperature,
                                   const PreviousOutputs* prev = nullptr,
                                   std::span<const double> attention_logits = {});

/// Reference forward pass of a single GA2M tree: two selectors, split inputs
/// alternating K1, K2, K1, ... down the depth; both mixed scalars receive the
/// same gated previous-output sum.
TreeForwardResult tree_forward_ga2m(const Matrix& x, const GamTreeLayer& layer,
                                    std::size_t tree, double temperature,
                                    const PreviousOutputs* prev = nullptr,
                                    std::span<const double> attention_logits = {});

/// Mixing weights over previous channels: gates normalized to sum 1, or the
/// gate-masked sparse attention distribution when attention logits are given.
/// If every gate is closed (sum below 1e-12) the mix is empty and the
/// previous-output term is omitted.
struct MixWeights {
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
};
MixWeights mix_weights(std::span<const double> gates,
                       std::span<const double> attention_logits = {});

}  // namespace nodegam
