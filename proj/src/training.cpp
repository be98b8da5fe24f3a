#include "nodegam/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nodegam/errors.hpp"
#include "nodegam/kernels.hpp"
#include "nodegam/metrics.hpp"

namespace nodegam {

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("train config: lr must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be > 0");
  if (!(plateau_decay_factor > 0.0 && plateau_decay_factor < 1.0))
    throw std::invalid_argument("train config: plateau_decay_factor must be in (0, 1)");
  if (!(mask_rate >= 0.0 && mask_rate < 1.0))
    throw std::invalid_argument("train config: mask_rate must be in [0, 1)");
  if (checkpoint_count == 0)
    throw std::invalid_argument("train config: checkpoint_count must be >= 1");
  if (eval_interval_steps == 0)
    throw std::invalid_argument("train config: eval_interval_steps must be >= 1");
  if (max_train_hours <= 0.0)
    throw std::invalid_argument("train config: max_train_hours must be > 0");
}

double loss_value(const Matrix& response, const Matrix& targets, const Matrix& tree_outputs,
                  double lambda, Task task) {
  if (!response.same_shape(targets))
    throw std::invalid_argument("loss: response/target shape mismatch");
  const std::size_t total = response.size();
  if (total == 0) throw std::invalid_argument("loss: empty batch");
  double acc = 0.0;
  if (task == Task::binary) {
    for (std::size_t t = 0; t < total; ++t) {
      const double r = response.flat()[t];
      const double y = targets.flat()[t];
      // Stable BCE with logits.
      acc += std::max(r, 0.0) - r * y + std::log1p(std::exp(-std::abs(r)));
    }
  } else {
    for (std::size_t t = 0; t < total; ++t) {
      const double d = response.flat()[t] - targets.flat()[t];
      acc += d * d;
    }
  }
  double loss = acc / static_cast<double>(total);
  if (lambda != 0.0 && tree_outputs.size() > 0)
    loss += lambda *
            kernels::ops().sum_sq(tree_outputs.data(), tree_outputs.size()) /
            static_cast<double>(tree_outputs.size());
  return loss;
}

double lr_schedule(std::uint64_t step, std::size_t num_decays, const TrainConfig& cfg) {
  double lr = cfg.lr;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  for (std::size_t d = 0; d < num_decays; ++d) lr *= cfg.plateau_decay_factor;
  return lr;
}

void set_output_bias_from_targets(NodeGamModel& model, const Matrix& targets) {
  if (targets.size() == 0) throw std::invalid_argument("output bias: empty targets");
  double mean = 0.0;
  for (double y : targets.flat()) mean += y;
  mean /= static_cast<double>(targets.size());
  if (model.cfg.task == Task::binary) {
    // Clamp so degenerate labels still give a finite prior logit.
    const double p = std::clamp(mean, 1e-6, 1.0 - 1e-6);
    model.output_bias = std::log(p / (1.0 - p));
  } else {
    model.output_bias = mean;
  }
}

std::vector<std::uint8_t> apply_feature_mask(Matrix& x, double rate, Rng& rng) {
  std::vector<std::uint8_t> mask(x.size(), 0);
  if (rate <= 0.0) return mask;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (rng.bernoulli(rate)) {
      mask[t] = 1;
      x.flat()[t] = 0.0;  // post-transform marginal mean
    }
  }
  return mask;
}

double validation_metric(const NodeGamModel& model, const Matrix& x, const Matrix& y) {
  const Matrix scores = model.predict(x);
  if (model.cfg.task == Task::binary)
    return auc(scores.flat(), y.flat());
  return rmse(scores.flat(), y.flat());
}

namespace {

struct ParamSnapshot {
  std::vector<double> values;
};

ParamSnapshot snapshot_params(std::vector<ParamBlock>& blocks) {
  ParamSnapshot snap;
  for (const ParamBlock& b : blocks)
    snap.values.insert(snap.values.end(), b.data, b.data + b.size);
  return snap;
}

void restore_mean(std::vector<ParamBlock>& blocks, const std::vector<ParamSnapshot>& ring) {
  if (ring.empty()) return;
  std::size_t total = 0;
  for (const ParamBlock& b : blocks) total += b.size;
  std::vector<double> mean(total, 0.0);
  for (const ParamSnapshot& snap : ring)
    for (std::size_t t = 0; t < total; ++t) mean[t] += snap.values[t];
  const double count = static_cast<double>(ring.size());
  std::size_t off = 0;
  for (ParamBlock& b : blocks) {
    for (std::size_t t = 0; t < b.size; ++t) b.data[t] = mean[off + t] / count;
    off += b.size;
  }
}

enum class Objective { supervised, masked_reconstruction };

struct LoopOptions {
  Objective objective = Objective::supervised;
  std::size_t freeze_steps = 0;  // head-only phase at the start
};

// Copy a set of rows into a dense batch.
void gather_rows(const Matrix& src, std::span<const std::size_t> rows, Matrix& dst) {
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(src.row(rows[r]).begin(), src.row(rows[r]).end(), dst.row(r).begin());
}

// Masked reconstruction pieces: zero masked inputs, MSE gradient on masked
// cells only.
struct MaskedBatch {
  Matrix inputs;
  std::vector<std::uint8_t> mask;
  std::size_t mask_count = 0;
};

MaskedBatch mask_batch(const Matrix& x, double rate, Rng& rng) {
  MaskedBatch mb;
  mb.inputs = x;
  mb.mask = apply_feature_mask(mb.inputs, rate, rng);
  for (std::uint8_t m : mb.mask) mb.mask_count += m;
  return mb;
}

double masked_mse(const Matrix& response, const Matrix& original,
                  const std::vector<std::uint8_t>& mask, std::size_t mask_count) {
  if (mask_count == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    if (mask[t]) {
      const double d = response.flat()[t] - original.flat()[t];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(mask_count);
}

double reconstruction_metric(NodeGamModel& model, const Matrix& x, double rate,
                             std::uint64_t mask_seed) {
  // Fixed mask per seed so successive evaluations are comparable.
  Rng rng(mask_seed);
  MaskedBatch mb = mask_batch(x, rate, rng);
  const Matrix rec = model.predict(mb.inputs);
  return masked_mse(rec, x, mb.mask, mb.mask_count);
}

TrainResult run_loop(NodeGamModel& model, const Matrix& x_train, const Matrix& y_train,
                     const Matrix& x_val, const Matrix& y_val, const TrainConfig& cfg,
                     const LoopOptions& opts) {
  cfg.validate();
  if (x_train.rows() == 0) throw std::invalid_argument("train: empty training data");
  if (x_val.rows() == 0) throw std::invalid_argument("train: empty validation data");
  const bool reconstruction = opts.objective == Objective::masked_reconstruction;
  if (!reconstruction && y_train.rows() != x_train.rows())
    throw std::invalid_argument("train: target/input row mismatch");
  if (!reconstruction && !y_train.all_finite())
    throw std::invalid_argument("train: non-finite targets");
  if (reconstruction && model.cfg.num_outputs != model.cfg.num_features)
    throw std::invalid_argument("pretrain: needs one output head per feature");

  const auto t_start = std::chrono::steady_clock::now();
  const bool metric_higher_better = !reconstruction && model.cfg.task == Task::binary;
  const std::size_t n = x_train.rows();
  const std::size_t batch_size = std::min(cfg.batch_size, n);

  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.fork();
  Rng forward_rng = rng.fork();
  Rng mask_rng = rng.fork();
  const std::uint64_t eval_mask_seed = rng.next_u64();

  auto blocks = model.param_blocks();
  QhAdam optimizer(cfg.optimizer, blocks);
  std::vector<std::uint8_t> frozen(blocks.size(), 0);
  auto set_freeze = [&](bool freeze_body) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const bool is_head = blocks[b].name == "last_linear" || blocks[b].name == "w0";
      frozen[b] = freeze_body && !is_head;
    }
  };

  auto eval_metric = [&]() {
    if (reconstruction)
      return reconstruction_metric(model, x_val, cfg.mask_rate, eval_mask_seed);
    return validation_metric(model, x_val, y_val);
  };

  TrainResult result;
  result.best_val_metric = metric_higher_better ? -std::numeric_limits<double>::infinity()
                                                : std::numeric_limits<double>::infinity();
  std::uint64_t last_improvement_step = model.train_step;
  std::uint64_t decay_barrier_step = model.train_step;
  std::size_t num_decays = 0;
  std::vector<ParamSnapshot> ring;
  double last_train_loss = 0.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;  // force initial shuffle

  Matrix batch_x(batch_size, x_train.cols());
  Matrix batch_y(batch_size, reconstruction ? 0 : y_train.cols());

  const std::uint64_t start_step = model.train_step;
  result.stop_reason = StopReason::max_steps;

  while (true) {
    if (cfg.max_steps > 0 && model.train_step - start_step >= cfg.max_steps) {
      result.stop_reason = StopReason::max_steps;
      break;
    }
    const double hours = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                       t_start).count() / 3600.0;
    if (hours >= cfg.max_train_hours) {
      result.stop_reason = StopReason::wall_clock;
      break;
    }

    // Next minibatch (reshuffle at epoch boundaries).
    if (cursor + batch_size > n) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    std::span<const std::size_t> rows{order.data() + cursor, batch_size};
    cursor += batch_size;
    gather_rows(x_train, rows, batch_x);

    const bool in_freeze = model.train_step - start_step < opts.freeze_steps;
    set_freeze(in_freeze);

    const double temp =
        temperature(model.train_step, model.cfg.anneal_steps, model.cfg.min_temperature);

    ForwardTrace trace;
    Matrix d_response;
    double data_loss = 0.0;
    const std::size_t heads = model.cfg.num_outputs;

    if (!reconstruction) {
      gather_rows(y_train, rows, batch_y);
      trace = model.forward_trace(batch_x, temp, true, &forward_rng, true);
      d_response = Matrix(batch_size, heads);
      const double inv = 1.0 / static_cast<double>(batch_size * heads);
      if (model.cfg.task == Task::binary) {
        for (std::size_t r = 0; r < batch_size; ++r) {
          const double y = batch_y(r, 0);
          const double s = trace.response(r, 0);
          data_loss += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
          d_response(r, 0) = (sigmoid(s) - y) * inv;
        }
      } else {
        for (std::size_t r = 0; r < batch_size; ++r) {
          const double d = trace.response(r, 0) - batch_y(r, 0);
          data_loss += d * d;
          d_response(r, 0) = 2.0 * d * inv;
        }
      }
      data_loss /= static_cast<double>(batch_size * heads);
    } else {
      MaskedBatch mb = mask_batch(batch_x, cfg.mask_rate, mask_rng);
      trace = model.forward_trace(mb.inputs, temp, true, &forward_rng, true);
      d_response = Matrix(batch_size, heads);
      if (mb.mask_count > 0) {
        const double inv = 1.0 / static_cast<double>(mb.mask_count);
        for (std::size_t t = 0; t < trace.response.size(); ++t) {
          if (mb.mask[t]) {
            const double d = trace.response.flat()[t] - batch_x.flat()[t];
            data_loss += d * d;
            d_response.flat()[t] = 2.0 * d * inv;
          }
        }
        data_loss *= inv;
      }
    }

    const std::size_t xp_entries = trace.xp.size();
    double penalty_coef = 0.0;
    double penalty = 0.0;
    if (model.cfg.l2_lambda != 0.0 && xp_entries > 0) {
      penalty = model.cfg.l2_lambda *
                kernels::ops().sum_sq(trace.xp.data(), xp_entries) /
                static_cast<double>(xp_entries);
      penalty_coef = 2.0 * model.cfg.l2_lambda / static_cast<double>(xp_entries);
    }
    last_train_loss = data_loss + penalty;

    const Gradients grads = model.backward(trace, d_response, penalty_coef);
    const double lr = lr_schedule(model.train_step + 1, num_decays, cfg);
    optimizer.step(blocks, grads, lr, &frozen);
    model.train_step += 1;

    // Evaluation, plateau handling, history, checkpoints.
    if (model.train_step % cfg.eval_interval_steps == 0) {
      const double metric = eval_metric();
      const bool improved = metric_higher_better ? metric > result.best_val_metric
                                                 : metric < result.best_val_metric;
      if (improved) {
        result.best_val_metric = metric;
        last_improvement_step = model.train_step;
      } else if (model.train_step >=
                 std::max(last_improvement_step, decay_barrier_step) +
                     cfg.plateau_patience_steps) {
        ++num_decays;
        decay_barrier_step = model.train_step;
      }
      result.history.push_back({model.train_step, last_train_loss, metric,
                                lr_schedule(model.train_step, num_decays, cfg), temp});
    }
    if (model.train_step % cfg.checkpoint_interval() == 0) {
      ring.push_back(snapshot_params(blocks));
      if (ring.size() > cfg.checkpoint_count) ring.erase(ring.begin());
    }

    if (model.train_step - last_improvement_step >= cfg.early_stop_steps) {
      result.stop_reason = StopReason::early_stop;
      break;
    }
  }

  // Final parameters: element-wise mean of the snapshot ring (the current
  // parameters count as the most recent checkpoint).
  if (ring.empty() || model.train_step % cfg.checkpoint_interval() != 0) {
    ring.push_back(snapshot_params(blocks));
    if (ring.size() > cfg.checkpoint_count) ring.erase(ring.begin());
  }
  for (const ParamSnapshot& snap : ring) result.checkpoint_ring.push_back(snap.values);
  restore_mean(blocks, ring);

  result.steps_run = model.train_step - start_step;
  result.final_val_metric = eval_metric();
  return result;
}

}  // namespace

TrainResult train(NodeGamModel& model, const Matrix& x_train, const Matrix& y_train,
                  const Matrix& x_val, const Matrix& y_val, const TrainConfig& cfg) {
  if (model.cfg.num_outputs != 1)
    throw std::invalid_argument("train: supervised model needs one output head");
  if (model.train_step == 0) set_output_bias_from_targets(model, y_train);
  LoopOptions opts;
  return run_loop(model, x_train, y_train, x_val, y_val, cfg, opts);
}

TrainResult pretrain(NodeGamModel& model, const Matrix& x_train, const Matrix& x_val,
                     const TrainConfig& cfg) {
  LoopOptions opts;
  opts.objective = Objective::masked_reconstruction;
  model.output_bias = 0.0;  // transformed features are centered already
  return run_loop(model, x_train, Matrix(), x_val, Matrix(), cfg, opts);
}

TrainResult finetune(NodeGamModel& model, const Matrix& x_train, const Matrix& y_train,
                     const Matrix& x_val, const Matrix& y_val, const TrainConfig& cfg) {
  if (y_train.rows() == 0) throw std::invalid_argument("finetune: needs labeled data");
  Rng head_rng(cfg.seed ^ 0x5eedful);
  model.reset_head(1, head_rng);
  set_output_bias_from_targets(model, y_train);
  LoopOptions opts;
  opts.freeze_steps = cfg.freeze_steps;
  return run_loop(model, x_train, y_train, x_val, y_val, cfg, opts);
}

}  // namespace nodegam
