// nodegam: train, pretrain, finetune, predict and explain NODE-GAM /
// NODE-GA2M models from CSV data.
//
// Exit codes: 0 success, 1 usage/config, 2 data or schema, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nodegam/config.hpp"
#include "nodegam/dataset.hpp"
#include "nodegam/errors.hpp"
#include "nodegam/interpret.hpp"
#include "nodegam/metrics.hpp"
#include "nodegam/model_io.hpp"
#include "nodegam/network.hpp"
#include "nodegam/preprocess.hpp"
#include "nodegam/rng.hpp"
#include "nodegam/threadpool.hpp"
#include "nodegam/training.hpp"

namespace fs = std::filesystem;
using namespace nodegam;

namespace {

struct KvOverrides {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> kv;
  std::vector<std::string> sets;  // raw key=value overrides
};

void add_kv(CLI::App* cmd, KvOverrides& ov, const std::string& flag, const std::string& key,
            const std::string& desc) {
  cmd->add_option_function<std::string>(
      flag, [&ov, key](const std::string& v) { ov.kv.push_back({key, v}); }, desc);
}

void add_kv_flag(CLI::App* cmd, KvOverrides& ov, const std::string& flag,
                 const std::string& key, const std::string& desc) {
  cmd->add_flag_callback(
      flag, [&ov, key] { ov.kv.push_back({key, "1"}); }, desc);
}

// Flags common to every subcommand; precedence: defaults < config file < flags.
void add_common(CLI::App* cmd, KvOverrides& ov) {
  cmd->add_option("--config", ov.config_file, "config file (key = value lines)");
  add_kv(cmd, ov, "--out", "out_dir", "output directory");
  add_kv(cmd, ov, "--seed", "seed", "rng seed");
  add_kv(cmd, ov, "--threads", "threads", "worker threads (0 = machine parallelism)");
  add_kv_flag(cmd, ov, "--deterministic", "deterministic",
              "single-threaded, bit-reproducible runs");
  cmd->add_option("--set", ov.sets, "extra key=value override (repeatable)");
}

void add_data_opts(CLI::App* cmd, KvOverrides& ov, bool with_val = true) {
  add_kv(cmd, ov, "--data", "data", "input CSV (header row required)");
  add_kv(cmd, ov, "--schema", "schema", "schema file (column = numeric|categorical|target)");
  if (with_val) {
    add_kv(cmd, ov, "--val-data", "val_data", "explicit validation CSV");
    add_kv(cmd, ov, "--val-fraction", "val_fraction", "validation fraction of --data");
  }
}

void add_model_opts(CLI::App* cmd, KvOverrides& ov) {
  add_kv(cmd, ov, "--mode", "mode", "gam | ga2m");
  add_kv(cmd, ov, "--arch", "arch", "plain | attention");
  add_kv(cmd, ov, "--num-layers", "num_layers", "tree layers");
  add_kv(cmd, ov, "--total-trees", "total_trees", "total trees across layers");
  add_kv(cmd, ov, "--num-trees", "num_trees", "trees per layer (overrides --total-trees)");
  add_kv(cmd, ov, "--depth", "depth", "tree depth");
  add_kv(cmd, ov, "--addi-tree-dim", "addi_tree_dim", "extra response channels per tree");
  add_kv(cmd, ov, "--colsample", "colsample", "feature subsample per tree");
  add_kv(cmd, ov, "--l2-lambda", "l2_lambda", "l2 penalty on tree outputs");
  add_kv(cmd, ov, "--output-dropout", "output_dropout", "dropout on tree outputs");
  add_kv(cmd, ov, "--last-dropout", "last_dropout", "dropout on the last linear weights");
  add_kv(cmd, ov, "--dim-att", "dim_att", "attention embedding size");
  add_kv(cmd, ov, "--anneal-steps", "anneal_steps", "temperature annealing steps");
  add_kv(cmd, ov, "--add-last-linear", "add_last_linear", "trainable last linear layer (0|1)");
  add_kv(cmd, ov, "--task", "task", "auto | binary | regression");
}

void add_train_opts(CLI::App* cmd, KvOverrides& ov) {
  add_kv(cmd, ov, "--lr", "lr", "base learning rate");
  add_kv(cmd, ov, "--batch-size", "batch_size", "minibatch size");
  add_kv(cmd, ov, "--max-steps", "max_steps", "step cap (0 = none)");
  add_kv(cmd, ov, "--eval-interval", "eval_interval_steps", "steps between evaluations");
  add_kv(cmd, ov, "--early-stop-steps", "early_stop_steps", "early stop patience");
  add_kv(cmd, ov, "--max-train-hours", "max_train_hours", "wall-clock cap");
  add_kv(cmd, ov, "--mask-rate", "mask_rate", "pretraining cell mask rate");
  add_kv(cmd, ov, "--freeze-steps", "freeze_steps", "finetuning head-only steps");
}

RunConfig resolve_config(const KvOverrides& ov) {
  RunConfig rc;
  if (!ov.config_file.empty()) rc.apply_file(ov.config_file);
  for (const auto& [key, value] : ov.kv) rc.apply(key, value);
  for (const std::string& kv : ov.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    rc.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  set_num_threads(rc.deterministic ? 1 : rc.threads);
  return rc;
}

Task resolve_task(const RunConfig& rc, std::span<const double> targets) {
  if (rc.task == "binary") return Task::binary;
  if (rc.task == "regression") return Task::regression;
  for (double y : targets)
    if (y != 0.0 && y != 1.0) return Task::regression;
  return Task::binary;
}

Matrix column_matrix(std::span<const double> v) {
  return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

// Seeded train/validation split; stratified per class for binary targets.
void split_rows(std::size_t n, std::span<const double> targets, double val_fraction,
                bool stratify, Rng& rng, std::vector<std::size_t>& train_rows,
                std::vector<std::size_t>& val_rows) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("val_fraction must be in (0, 1)");
  train_rows.clear();
  val_rows.clear();
  std::vector<std::vector<std::size_t>> buckets;
  if (stratify) {
    buckets.resize(2);
    for (std::size_t r = 0; r < n; ++r) buckets[targets[r] > 0.5 ? 1 : 0].push_back(r);
  } else {
    buckets.resize(1);
    for (std::size_t r = 0; r < n; ++r) buckets[0].push_back(r);
  }
  for (auto& bucket : buckets) {
    rng.shuffle(bucket);
    const std::size_t n_val = static_cast<std::size_t>(
        std::round(val_fraction * static_cast<double>(bucket.size())));
    for (std::size_t i = 0; i < bucket.size(); ++i)
      (i < n_val ? val_rows : train_rows).push_back(bucket[i]);
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  if (train_rows.empty() || val_rows.empty())
    throw schema_error("train/validation split left an empty side");
}

RawTable subset(const RawTable& table, std::span<const std::size_t> rows) {
  RawTable out;
  out.header = table.header;
  for (std::size_t r : rows) out.rows.push_back(table.rows[r]);
  return out;
}

void write_history(const std::string& path, const std::vector<HistoryRecord>& history) {
  std::ostringstream out;
  for (const HistoryRecord& rec : history) {
    nlohmann::json j;
    j["step"] = rec.step;
    j["train_loss"] = rec.train_loss;
    j["val_metric"] = rec.val_metric;
    j["lr"] = rec.lr;
    j["temperature"] = rec.temperature;
    out << j.dump() << "\n";
  }
  atomic_write_file(path, out.str());
}

void echo_config(const RunConfig& rc, const std::string& out_dir) {
  atomic_write_file((fs::path(out_dir) / "config_used.conf").string(), rc.to_text());
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out.empty() ? "feature" : out;
}

std::uint32_t file_crc(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw schema_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string s = buf.str();
  return crc32(s.data(), s.size());
}

struct LoadedData {
  RawTable table;
  std::vector<double> targets;  // empty when the target column is absent
};

LoadedData load_data(const RunConfig& rc, const Schema& schema, bool require_target) {
  if (rc.data.empty()) throw std::invalid_argument("--data is required");
  LoadedData data;
  data.table = read_csv(rc.data);
  const auto target_col = data.table.column_index(schema.target_name());
  if (target_col)
    data.targets = extract_targets(data.table, schema);
  else if (require_target)
    throw schema_error("target column '" + schema.target_name() + "' missing from " + rc.data);
  return data;
}

int cmd_train(const KvOverrides& ov) {
  const RunConfig rc = resolve_config(ov);
  if (rc.schema.empty()) throw std::invalid_argument("--schema is required");
  const Schema schema = Schema::load(rc.schema);
  const LoadedData all = load_data(rc, schema, true);
  if (all.table.num_rows() == 0) throw schema_error("training data has no rows");

  const Task task = resolve_task(rc, all.targets);

  Rng master(rc.seed);
  Rng split_rng = master.fork();
  Rng pipe_rng = master.fork();
  Rng init_rng = master.fork();

  RawTable train_table, val_table;
  std::vector<double> y_train, y_val;
  if (!rc.val_data.empty()) {
    train_table = all.table;
    y_train = all.targets;
    val_table = read_csv(rc.val_data);
    y_val = extract_targets(val_table, schema);
  } else {
    std::vector<std::size_t> train_rows, val_rows;
    split_rows(all.table.num_rows(), all.targets, rc.val_fraction, task == Task::binary,
               split_rng, train_rows, val_rows);
    train_table = subset(all.table, train_rows);
    val_table = subset(all.table, val_rows);
    for (std::size_t r : train_rows) y_train.push_back(all.targets[r]);
    for (std::size_t r : val_rows) y_val.push_back(all.targets[r]);
  }

  // The pipeline sees the train split only.
  Pipeline pipeline;
  pipeline.fit(train_table, schema, y_train, pipe_rng, rc.quantile_bins,
               Pipeline::kDefaultFitNoise, rc.target_smoothing);
  const Matrix x_train = pipeline.transform(train_table);
  const Matrix x_val = pipeline.transform(val_table);

  NodeGamModel model =
      NodeGamModel::init(rc.model_config(pipeline.num_features(), 1, task), init_rng);
  const TrainResult result = train(model, x_train, column_matrix(y_train), x_val,
                                   column_matrix(y_val), rc.train_config());

  fs::create_directories(rc.out_dir);
  save_model((fs::path(rc.out_dir) / "model.ngam").string(), model, pipeline, {});
  write_history((fs::path(rc.out_dir) / "history.jsonl").string(), result.history);
  echo_config(rc, rc.out_dir);
  std::cout << "trained " << result.steps_run << " steps, final val "
            << (task == Task::binary ? "auc" : "rmse") << " = " << result.final_val_metric
            << "\nmodel: " << (fs::path(rc.out_dir) / "model.ngam").string() << "\n";
  return 0;
}

int cmd_pretrain(const KvOverrides& ov) {
  const RunConfig rc = resolve_config(ov);
  if (rc.schema.empty()) throw std::invalid_argument("--schema is required");
  const Schema schema = Schema::load(rc.schema);
  LoadedData all = load_data(rc, schema, false);
  if (all.table.num_rows() == 0) throw schema_error("pretraining data has no rows");
  // Target encoding needs some target signal; without labels it degrades to
  // the (constant) global mean, which is fine for reconstruction.
  if (all.targets.empty()) all.targets.assign(all.table.num_rows(), 0.0);

  Rng master(rc.seed);
  Rng split_rng = master.fork();
  Rng pipe_rng = master.fork();
  Rng init_rng = master.fork();

  std::vector<std::size_t> train_rows, val_rows;
  split_rows(all.table.num_rows(), all.targets, rc.val_fraction, false, split_rng,
             train_rows, val_rows);
  const RawTable train_table = subset(all.table, train_rows);
  const RawTable val_table = subset(all.table, val_rows);
  std::vector<double> y_train;
  for (std::size_t r : train_rows) y_train.push_back(all.targets[r]);

  Pipeline pipeline;
  pipeline.fit(train_table, schema, y_train, pipe_rng, rc.quantile_bins,
               Pipeline::kDefaultFitNoise, rc.target_smoothing);
  const Matrix x_train = pipeline.transform(train_table);
  const Matrix x_val = pipeline.transform(val_table);

  // One reconstruction head per feature.
  ModelConfig mc =
      rc.model_config(pipeline.num_features(), pipeline.num_features(), Task::regression);
  if (!mc.add_last_linear)
    throw std::invalid_argument("pretrain: add_last_linear must be 1 (multi-head output)");
  NodeGamModel model = NodeGamModel::init(mc, init_rng);
  const TrainResult result = pretrain(model, x_train, x_val, rc.train_config());

  fs::create_directories(rc.out_dir);
  save_model((fs::path(rc.out_dir) / "model.ngam").string(), model, pipeline,
             {{"pretrained", "1"}});
  write_history((fs::path(rc.out_dir) / "history.jsonl").string(), result.history);
  echo_config(rc, rc.out_dir);
  std::cout << "pretrained " << result.steps_run << " steps, final reconstruction mse = "
            << result.final_val_metric << "\nmodel: "
            << (fs::path(rc.out_dir) / "model.ngam").string() << "\n";
  return 0;
}

int cmd_finetune(const KvOverrides& ov) {
  const RunConfig rc = resolve_config(ov);
  if (rc.model_in.empty()) throw std::invalid_argument("--model is required");
  ModelBundle bundle = load_model(rc.model_in);
  if (bundle.model.cfg.num_outputs != bundle.pipeline.num_features())
    throw schema_error("finetune: model has " + std::to_string(bundle.model.cfg.num_outputs) +
                       " heads, expected one per feature (" +
                       std::to_string(bundle.pipeline.num_features()) +
                       "); is this a pretrained model?");
  const std::uint32_t provenance = file_crc(rc.model_in);

  const Schema& schema = bundle.pipeline.schema();
  const LoadedData all = load_data(rc, schema, true);
  if (all.table.num_rows() == 0) throw schema_error("finetuning data has no rows");
  const Task task = resolve_task(rc, all.targets);
  bundle.model.cfg.task = task;

  Rng master(rc.seed);
  Rng split_rng = master.fork();

  RawTable train_table, val_table;
  std::vector<double> y_train, y_val;
  if (!rc.val_data.empty()) {
    train_table = all.table;
    y_train = all.targets;
    val_table = read_csv(rc.val_data);
    y_val = extract_targets(val_table, schema);
  } else {
    std::vector<std::size_t> train_rows, val_rows;
    split_rows(all.table.num_rows(), all.targets, rc.val_fraction, task == Task::binary,
               split_rng, train_rows, val_rows);
    train_table = subset(all.table, train_rows);
    val_table = subset(all.table, val_rows);
    for (std::size_t r : train_rows) y_train.push_back(all.targets[r]);
    for (std::size_t r : val_rows) y_val.push_back(all.targets[r]);
  }

  const Matrix x_train = bundle.pipeline.transform(train_table);
  const Matrix x_val = bundle.pipeline.transform(val_table);
  const TrainResult result = finetune(bundle.model, x_train, column_matrix(y_train), x_val,
                                      column_matrix(y_val), rc.train_config());

  std::ostringstream crc_hex;
  crc_hex << std::hex << provenance;
  fs::create_directories(rc.out_dir);
  save_model((fs::path(rc.out_dir) / "model.ngam").string(), bundle.model, bundle.pipeline,
             {{"finetuned_from", rc.model_in}, {"pretrained_crc32", crc_hex.str()}});
  write_history((fs::path(rc.out_dir) / "history.jsonl").string(), result.history);
  echo_config(rc, rc.out_dir);
  std::cout << "finetuned " << result.steps_run << " steps, final val "
            << (task == Task::binary ? "auc" : "rmse") << " = " << result.final_val_metric
            << "\nmodel: " << (fs::path(rc.out_dir) / "model.ngam").string() << "\n";
  return 0;
}

int cmd_predict(const KvOverrides& ov, const std::string& out_file) {
  const RunConfig rc = resolve_config(ov);
  if (rc.model_in.empty()) throw std::invalid_argument("--model is required");
  const ModelBundle bundle = load_model(rc.model_in);
  const LoadedData data = load_data(rc, bundle.pipeline.schema(), false);

  const bool binary = bundle.model.cfg.task == Task::binary;
  std::ostringstream out;
  out.precision(17);
  out << (binary ? "row,score,probability\n" : "row,score\n");
  if (data.table.num_rows() > 0) {
    const Matrix x = bundle.pipeline.transform(data.table);
    const Matrix scores = bundle.model.predict(x);
    for (std::size_t r = 0; r < scores.rows(); ++r) {
      out << r << "," << scores(r, 0);
      if (binary) out << "," << sigmoid(scores(r, 0));
      out << "\n";
    }
  }
  atomic_write_file(out_file, out.str());
  std::cout << "wrote " << data.table.num_rows() << " predictions to " << out_file << "\n";
  return 0;
}

int cmd_explain(const KvOverrides& ov, const std::string& out_file, bool audit,
                const std::string& plot_dir) {
  const RunConfig rc = resolve_config(ov);
  if (rc.model_in.empty()) throw std::invalid_argument("--model is required");
  ModelBundle bundle = load_model(rc.model_in);
  NodeGamModel& model = bundle.model;
  if (!model.annealed())
    throw invalid_state_error(
        "explain: training incomplete (temperature schedule has not finished; step " +
        std::to_string(model.train_step) + " of " + std::to_string(model.cfg.anneal_steps) +
        ")");

  const LoadedData data = load_data(rc, bundle.pipeline.schema(), false);
  if (data.table.num_rows() == 0) throw schema_error("explain: data has no rows");
  const Matrix encoded = bundle.pipeline.encode(data.table);
  std::vector<std::string> names;
  for (const auto& f : bundle.pipeline.features()) names.push_back(f.name);

  const auto to_model_space = [&](const Matrix& m) {
    return bundle.pipeline.transform_encoded(m);
  };
  const PredictFn predict_encoded = [&](const Matrix& m) {
    const Matrix scores = model.predict(to_model_space(m));
    return std::vector<double>(scores.flat().begin(), scores.flat().end());
  };

  GamExplanation expl;
  double pre_purify_gap = 0.0;
  if (model.cfg.mode == GamMode::gam) {
    expl = extract_gam_shapes(predict_encoded, encoded, names, rc.explain_bins);
  } else {
    expl = extract_ga2m_terms(model, encoded, to_model_space, names, rc.explain_bins);
    if (audit) {
      for (std::size_t r = 0; r < encoded.rows(); ++r) {
        const auto snapped = snap_row(expl, encoded.row(r));
        const double truth = predict_encoded(Matrix(1, snapped.size(), snapped))[0];
        pre_purify_gap = std::max(
            pre_purify_gap, std::abs(explanation_value(expl, encoded.row(r)) - truth));
      }
    }
    purify_all(expl);
    center_terms(expl);
  }
  finalize_importances(expl);

  double final_gap = 0.0;
  if (audit) {
    for (std::size_t r = 0; r < encoded.rows(); ++r) {
      const auto snapped = snap_row(expl, encoded.row(r));
      const double truth = predict_encoded(Matrix(1, snapped.size(), snapped))[0];
      final_gap =
          std::max(final_gap, std::abs(explanation_value(expl, encoded.row(r)) - truth));
    }
  }

  atomic_write_file(out_file, explanation_to_json(expl));
  if (!plot_dir.empty()) {
    fs::create_directories(plot_dir);
    for (const ShapeFunction& shape : expl.shapes) {
      std::ostringstream csv;
      csv.precision(17);
      csv << "value,shape,count\n";
      for (std::size_t g = 0; g < shape.grid.size(); ++g)
        csv << shape.grid[g] << "," << shape.values[g] << "," << shape.counts[g] << "\n";
      atomic_write_file(
          (fs::path(plot_dir) / ("shape_" + sanitize(shape.name) + ".csv")).string(),
          csv.str());
    }
    for (const InteractionSurface& surf : expl.interactions) {
      std::ostringstream csv;
      csv.precision(17);
      csv << "grid";
      for (double v : surf.grid_j) csv << "," << v;
      csv << "\n";
      for (std::size_t i = 0; i < surf.grid_i.size(); ++i) {
        csv << surf.grid_i[i];
        for (std::size_t j = 0; j < surf.grid_j.size(); ++j) csv << "," << surf.values(i, j);
        csv << "\n";
      }
      atomic_write_file((fs::path(plot_dir) / ("interaction_" + sanitize(surf.name_i) +
                                               "__" + sanitize(surf.name_j) + ".csv"))
                            .string(),
                        csv.str());
    }
  }

  std::cout << "wrote explanation (" << expl.shapes.size() << " mains, "
            << expl.interactions.size() << " interactions) to " << out_file << "\n";
  if (audit) {
    if (model.cfg.mode == GamMode::ga2m)
      std::cout << "audit: max gap before purification = " << pre_purify_gap
                << " (tolerance 1e-5)\n";
    std::cout << "audit: max reconstruction gap = " << final_gap << " (tolerance "
              << (model.cfg.mode == GamMode::ga2m ? "1e-4" : "1e-5") << ")\n";
    const double tol = model.cfg.mode == GamMode::ga2m ? 1e-4 : 1e-5;
    if (final_gap > tol ||
        (model.cfg.mode == GamMode::ga2m && pre_purify_gap > 1e-5)) {
      std::cerr << "audit failed\n";
      return 3;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NODE-GAM / NODE-GA2M training, inference and interpretation"};
  app.require_subcommand(1);

  KvOverrides train_ov, pretrain_ov, finetune_ov, predict_ov, explain_ov;
  std::string predict_out = "predictions.csv";
  std::string explain_out = "explanation.json";
  std::string plot_dir;
  bool audit = false;

  CLI::App* train_cmd = app.add_subcommand("train", "supervised training");
  add_common(train_cmd, train_ov);
  add_data_opts(train_cmd, train_ov);
  add_model_opts(train_cmd, train_ov);
  add_train_opts(train_cmd, train_ov);

  CLI::App* pretrain_cmd =
      app.add_subcommand("pretrain", "self-supervised masked reconstruction");
  add_common(pretrain_cmd, pretrain_ov);
  add_data_opts(pretrain_cmd, pretrain_ov);
  add_model_opts(pretrain_cmd, pretrain_ov);
  add_train_opts(pretrain_cmd, pretrain_ov);

  CLI::App* finetune_cmd = app.add_subcommand("finetune", "finetune a pretrained model");
  add_common(finetune_cmd, finetune_ov);
  add_data_opts(finetune_cmd, finetune_ov);
  add_kv(finetune_cmd, finetune_ov, "--model", "model_in", "pretrained model file");
  add_train_opts(finetune_cmd, finetune_ov);

  CLI::App* predict_cmd = app.add_subcommand("predict", "score a CSV with a saved model");
  add_common(predict_cmd, predict_ov);
  add_data_opts(predict_cmd, predict_ov, false);
  add_kv(predict_cmd, predict_ov, "--model", "model_in", "model file");
  predict_cmd->add_option("--out-file", predict_out, "predictions CSV path");

  CLI::App* explain_cmd = app.add_subcommand("explain", "extract shape graphs");
  add_common(explain_cmd, explain_ov);
  add_data_opts(explain_cmd, explain_ov, false);
  add_kv(explain_cmd, explain_ov, "--model", "model_in", "model file");
  add_kv(explain_cmd, explain_ov, "--bins", "explain_bins", "max quantile bins per feature");
  explain_cmd->add_option("--out-file", explain_out, "explanation JSON path");
  explain_cmd->add_option("--plot-data", plot_dir, "directory for per-term plot CSVs");
  explain_cmd->add_flag("--audit", audit, "verify term sums against model outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_ov);
    if (pretrain_cmd->parsed()) return cmd_pretrain(pretrain_ov);
    if (finetune_cmd->parsed()) return cmd_finetune(finetune_ov);
    if (predict_cmd->parsed()) return cmd_predict(predict_ov, predict_out);
    if (explain_cmd->parsed()) return cmd_explain(explain_ov, explain_out, audit, plot_dir);
  } catch (const schema_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const invalid_state_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
