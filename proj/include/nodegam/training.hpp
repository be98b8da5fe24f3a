#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nodegam/matrix.hpp"
#include "nodegam/network.hpp"
#include "nodegam/optimizer.hpp"

namespace nodegam {

struct TrainConfig {
  double lr = 0.01;
  std::size_t batch_size = 2048;
  std::size_t warmup_steps = 500;
  std::size_t plateau_patience_steps = 5000;
  double plateau_decay_factor = 0.2;
  std::size_t early_stop_steps = 11000;
  std::size_t checkpoint_count = 5;
  std::size_t checkpoint_interval_steps = 0;  // 0: follow eval_interval_steps
  double max_train_hours = 20.0;
  std::size_t eval_interval_steps = 200;
  std::size_t max_steps = 0;  // 0: no step cap (stop on early stop / wall clock)
  std::uint64_t seed = 1;
  double mask_rate = 0.15;        // pretraining cell-mask probability
  std::size_t freeze_steps = 500;  // finetuning head-only phase
  QhAdamConfig optimizer;

  void validate() const;
  std::size_t checkpoint_interval() const {
    return checkpoint_interval_steps ? checkpoint_interval_steps : eval_interval_steps;
  }
};

struct HistoryRecord {
  std::uint64_t step;
  double train_loss;
  double val_metric;
  double lr;
  double temperature;
};

enum class StopReason { early_stop, max_steps, wall_clock };

struct TrainResult {
  std::vector<HistoryRecord> history;
  double best_val_metric;
  double final_val_metric;
  std::uint64_t steps_run;
  StopReason stop_reason;
  // Snapshot ring the final parameters were averaged from (flattened in
  // param-block order, oldest first).
  std::vector<std::vector<double>> checkpoint_ring;
};

/// Masks each cell independently with probability `rate` (masked cells set
/// to 0, the transformed marginal mean). Returns the mask, 1 = masked.
std::vector<std::uint8_t> apply_feature_mask(Matrix& x, double rate, Rng& rng);

/// Training objective: mean binary cross-entropy on logits (binary) or mean
/// squared error (regression), plus lambda * mean(tree_outputs^2).
double loss_value(const Matrix& response, const Matrix& targets, const Matrix& tree_outputs,
                  double lambda, Task task);

/// Warmup ramp and plateau decay: lr = base * min(1, step/warmup) *
/// decay_factor^num_decays. `step` is the 1-based update count.
double lr_schedule(std::uint64_t step, std::size_t num_decays, const TrainConfig& cfg);

/// Supervised training (Alg.-style loop): shuffled minibatches, QHAdam,
/// temperature annealing driven by the model's step counter, plateau decay,
/// early stopping, and checkpoint averaging of the last snapshots.
TrainResult train(NodeGamModel& model, const Matrix& x_train, const Matrix& y_train,
                  const Matrix& x_val, const Matrix& y_val, const TrainConfig& cfg);

/// Self-supervised pretraining: masks each input cell independently with
/// probability mask_rate (masked cells read 0), reconstructs the original
/// values through per-feature output heads, and scores MSE on the masked
/// cells only. Requires model.cfg.num_outputs == num_features.
TrainResult pretrain(NodeGamModel& model, const Matrix& x_train, const Matrix& x_val,
                     const TrainConfig& cfg);

/// Finetuning after pretraining: re-initializes the output head for one
/// target, freezes everything else for freeze_steps, then trains jointly.
/// The annealing step counter carries over.
TrainResult finetune(NodeGamModel& model, const Matrix& x_train, const Matrix& y_train,
                     const Matrix& x_val, const Matrix& y_val, const TrainConfig& cfg);

/// Class-prior logit (binary) or target mean (regression), frozen into the
/// model output so the l2 penalty pushes tree outputs toward zero.
void set_output_bias_from_targets(NodeGamModel& model, const Matrix& targets);

/// Validation metric: AUC for binary (higher better), RMSE for regression
/// (lower better).
double validation_metric(const NodeGamModel& model, const Matrix& x, const Matrix& y);

}  // namespace nodegam
