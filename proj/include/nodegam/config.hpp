#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nodegam/network.hpp"
#include "nodegam/training.hpp"

namespace nodegam {

/// Flat key=value run configuration: model architecture, optimization
/// schedule, data paths. Every key has a default; unknown keys are rejected;
/// the effective config echoes back as a file that reproduces the run.
struct RunConfig {
  // model
  std::string mode = "gam";        // gam | ga2m
  std::string arch = "attention";  // plain | attention
  std::size_t num_layers = 3;
  std::size_t num_trees = 0;  // per layer; 0 derives from total_trees
  std::size_t total_trees = 2000;
  std::size_t depth = 4;
  std::size_t addi_tree_dim = 0;
  double output_dropout = 0.0;
  double last_dropout = 0.5;
  double colsample = 0.1;
  double l2_lambda = 1e-5;
  std::size_t dim_att = 16;
  std::size_t anneal_steps = 4000;
  double min_temperature = 0.01;
  bool add_last_linear = true;
  std::string task = "auto";  // auto | binary | regression

  // training
  double lr = 0.01;
  std::size_t batch_size = 2048;
  std::size_t warmup_steps = 500;
  std::size_t plateau_patience_steps = 5000;
  double plateau_decay_factor = 0.2;
  std::size_t early_stop_steps = 11000;
  std::size_t checkpoint_count = 5;
  std::size_t checkpoint_interval_steps = 0;
  double max_train_hours = 20.0;
  std::size_t eval_interval_steps = 200;
  std::size_t max_steps = 0;
  std::uint64_t seed = 1;
  double mask_rate = 0.15;
  std::size_t freeze_steps = 500;
  double qh_nu1 = 0.7;
  double qh_nu2 = 1.0;
  double beta1 = 0.95;
  double beta2 = 0.998;
  double eps = 1e-8;

  // run / data
  std::string data;
  std::string schema;
  std::string val_data;
  double val_fraction = 0.2;
  std::string model_in;
  std::string out_dir = ".";
  std::size_t threads = 0;  // 0: machine parallelism
  bool deterministic = false;
  std::size_t quantile_bins = 2000;
  double target_smoothing = 10.0;
  std::size_t explain_bins = 256;

  /// Applies one key=value pair; throws std::invalid_argument on unknown
  /// keys or unparsable values.
  void apply(const std::string& key, const std::string& value);

  /// Parses a config file (key = value lines, '#' comments) over *this.
  void apply_file(const std::string& path);
  void apply_text(const std::string& text);

  /// Serializes every key (a valid config file reproducing the run).
  std::string to_text() const;

  std::size_t trees_per_layer() const {
    if (num_trees > 0) return num_trees;
    return std::max<std::size_t>(1, total_trees / std::max<std::size_t>(1, num_layers));
  }

  ModelConfig model_config(std::size_t num_features, std::size_t num_outputs,
                           Task task_kind) const;
  TrainConfig train_config() const;
};

}  // namespace nodegam
