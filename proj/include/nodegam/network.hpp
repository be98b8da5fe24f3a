#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nodegam/layer.hpp"
#include "nodegam/matrix.hpp"
#include "nodegam/rng.hpp"

namespace nodegam {

enum class Arch { plain, attention };
enum class Task { binary, regression };

struct ModelConfig {
  GamMode mode = GamMode::gam;
  Arch arch = Arch::attention;
  std::size_t num_layers = 3;
  std::size_t trees_per_layer = 666;
  std::size_t depth = 4;
  std::size_t addi_tree_dim = 0;
  double output_dropout = 0.0;  // p1, on tree outputs
  double last_dropout = 0.5;    // p2, on the last linear weights
  double colsample = 0.1;       // eta
  double l2_lambda = 1e-5;
  std::size_t attention_dim = 16;   // E (attention arch only)
  std::size_t anneal_steps = 4000;  // S
  double min_temperature = 0.01;
  std::size_t num_features = 0;  // D
  std::size_t num_outputs = 1;   // 1 supervised, D reconstruction heads
  Task task = Task::binary;
  bool add_last_linear = true;

  std::size_t response_dim() const { return 1 + addi_tree_dim; }
  std::size_t total_channels() const {
    return num_layers * trees_per_layer * response_dim();
  }
  std::size_t channels_before(std::size_t layer) const {
    return layer * trees_per_layer * response_dim();
  }
  void validate() const;  // throws std::invalid_argument
};

/// Temperature schedule: min_temperature^(step/anneal_steps) while
/// step <= anneal_steps, exactly 0 afterwards (hard one-hot selections).
double temperature(std::uint64_t step, std::uint64_t anneal_steps,
                   double min_temperature = 0.01);

struct ParamBlock {
  std::string name;
  double* data;
  std::size_t size;
};

struct ForwardResult {
  Matrix response;      // [batch x num_outputs]
  Matrix tree_outputs;  // [batch x total_channels], post-dropout in training
};

/// Per-tree mixing record kept for the backward pass (batch-independent).
struct TreeMixTrace {
  std::vector<std::uint32_t> open;  // previous channels with gate > 0
  std::vector<double> g_open;
  std::vector<std::uint8_t> capped;               // GA2M gate cap active
  std::vector<double> dots_a, dots_b, dots_c, dots_d;  // GA2M gate factors
  std::vector<std::uint32_t> supp;  // attention support (subset of open)
  std::vector<double> ent;          // attention distribution at supp
  MixWeights mix;                   // final previous-output weights
  double g_sum = 0.0;
};

/// Trees sharing one open-gate set, with their mixing weights packed into a
/// dense [trees x channels] block so the batch passes run as gather-GEMMs.
struct MixGroup {
  std::vector<std::uint32_t> trees;
  std::vector<std::uint32_t> channels;  // the shared open set, ascending
  std::vector<double> weights;
};

struct LayerTrace {
  Matrix sel1, sel2;                // [I x D] selection distributions
  std::vector<TreeMixTrace> mixes;  // size I; empty when layer has no inputs
  std::vector<MixGroup> mix_groups;
  std::vector<std::uint32_t> mix_singles;  // trees mixed via the sparse path
  std::vector<std::int32_t> tree_group;    // group index per tree, -1 if single
  std::vector<std::uint32_t> tree_group_row;
  std::vector<double> k1, k2;       // mixed scalars, [I * batch] tree-major
  std::vector<double> p1_mask;      // dropout multipliers, [channels * batch]
};

struct ForwardTrace {
  double temperature = 1.0;
  bool training = false;
  std::size_t batch = 0;
  std::vector<double> x_cols;  // input transposed, [D * batch]
  std::vector<LayerTrace> layers;
  std::vector<double> xp;       // all tree outputs, [total_channels * batch]
  std::vector<double> wl_mask;  // last-linear dropout multipliers (if any)
  Matrix response;              // [batch x num_outputs]
};

/// Gradients aligned with NodeGamModel::param_blocks().
struct Gradients {
  std::vector<std::vector<double>> by_block;
};

/// The full NODE-GAM / NODE-GA2M network: stacked tree layers with gated
/// dense connections, optional low-rank attention, a last linear layer and a
/// frozen output bias. When add_last_linear is false the last linear weights
/// are fixed to average every tree's first response channel.
struct NodeGamModel {
  ModelConfig cfg;
  std::vector<GamTreeLayer> layers;
  std::vector<Matrix> attn_b;  // per layer: [channels_before(l) x E]; empty for layer 0
  std::vector<Matrix> attn_c;  // per layer: [E x I]; empty for layer 0
  Matrix last_linear;          // [total_channels x num_outputs]
  std::vector<double> w0;      // output bias vector (trainable)
  double output_bias = 0.0;    // class prior / target mean, frozen
  std::uint64_t train_step = 0;

  static NodeGamModel init(const ModelConfig& cfg, Rng& rng);

  double current_temperature() const {
    return temperature(train_step, cfg.anneal_steps, cfg.min_temperature);
  }
  bool annealed() const { return train_step > cfg.anneal_steps; }

  /// Training/inference forward pass with the record needed for backward.
  /// `temp` is the selection temperature; rng is needed when training with
  /// dropout or when init_thresholds is set.
  ForwardTrace forward_trace(const Matrix& x, double temp, bool training,
                             Rng* rng = nullptr, bool init_thresholds = false);

  /// Forward pass at the stored step's temperature.
  ForwardResult forward(const Matrix& x, bool training, Rng* rng = nullptr);

  /// Deterministic inference scores (dropout off, temperature from the
  /// stored step). Internally processes rows in blocks.
  Matrix predict(const Matrix& x) const;

  /// Binary tasks: sigmoid of the scores.
  Matrix predict_probability(const Matrix& x) const;

  /// Backward pass. response_grad is dLoss/dResponse [batch x num_outputs];
  /// penalty_coef adds penalty_coef * xp to the tree-output gradient (the
  /// l2 term on tree outputs).
  Gradients backward(const ForwardTrace& trace, const Matrix& response_grad,
                     double penalty_coef = 0.0);

  /// Trainable parameter blocks in a stable order.
  std::vector<ParamBlock> param_blocks();

  /// Per-tree selected features after annealing: {j, j} for a GAM tree on
  /// feature j, the unordered pair {a, b} for a GA2M tree. Trees are indexed
  /// layer-major. Throws invalid_state_error before annealing completes.
  std::vector<std::array<std::size_t, 2>> dependency_report() const;

  /// Re-initialize the output head (finetuning after pretraining).
  void reset_head(std::size_t num_outputs, Rng& rng);
};

double sigmoid(double x);

}  // namespace nodegam
