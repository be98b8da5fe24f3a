#include "nodegam/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nodegam {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "': bad number '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw std::invalid_argument("config: key '" + key + "': bad integer '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("config: key '" + key + "': bad flag '" + v + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "mode") {
    if (v != "gam" && v != "ga2m")
      throw std::invalid_argument("config: mode must be gam or ga2m");
    mode = v;
  } else if (key == "arch") {
    if (v != "plain" && v != "attention")
      throw std::invalid_argument("config: arch must be plain or attention");
    arch = v;
  } else if (key == "num_layers") {
    num_layers = parse_uint(key, v);
  } else if (key == "num_trees") {
    num_trees = parse_uint(key, v);
  } else if (key == "total_trees") {
    total_trees = parse_uint(key, v);
  } else if (key == "depth") {
    depth = parse_uint(key, v);
  } else if (key == "addi_tree_dim") {
    addi_tree_dim = parse_uint(key, v);
  } else if (key == "output_dropout") {
    output_dropout = parse_double(key, v);
  } else if (key == "last_dropout") {
    last_dropout = parse_double(key, v);
  } else if (key == "colsample") {
    colsample = parse_double(key, v);
  } else if (key == "l2_lambda") {
    l2_lambda = parse_double(key, v);
  } else if (key == "dim_att") {
    dim_att = parse_uint(key, v);
  } else if (key == "anneal_steps") {
    anneal_steps = parse_uint(key, v);
  } else if (key == "min_temperature") {
    min_temperature = parse_double(key, v);
  } else if (key == "add_last_linear") {
    add_last_linear = parse_bool(key, v);
  } else if (key == "task") {
    if (v != "auto" && v != "binary" && v != "regression")
      throw std::invalid_argument("config: task must be auto, binary or regression");
    task = v;
  } else if (key == "lr") {
    lr = parse_double(key, v);
  } else if (key == "batch_size") {
    batch_size = parse_uint(key, v);
  } else if (key == "warmup_steps") {
    warmup_steps = parse_uint(key, v);
  } else if (key == "plateau_patience_steps") {
    plateau_patience_steps = parse_uint(key, v);
  } else if (key == "plateau_decay_factor") {
    plateau_decay_factor = parse_double(key, v);
  } else if (key == "early_stop_steps") {
    early_stop_steps = parse_uint(key, v);
  } else if (key == "checkpoint_count") {
    checkpoint_count = parse_uint(key, v);
  } else if (key == "checkpoint_interval_steps") {
    checkpoint_interval_steps = parse_uint(key, v);
  } else if (key == "max_train_hours") {
    max_train_hours = parse_double(key, v);
  } else if (key == "eval_interval_steps") {
    eval_interval_steps = parse_uint(key, v);
  } else if (key == "max_steps") {
    max_steps = parse_uint(key, v);
  } else if (key == "seed") {
    seed = parse_uint(key, v);
  } else if (key == "mask_rate") {
    mask_rate = parse_double(key, v);
  } else if (key == "freeze_steps") {
    freeze_steps = parse_uint(key, v);
  } else if (key == "qh_nu1") {
    qh_nu1 = parse_double(key, v);
  } else if (key == "qh_nu2") {
    qh_nu2 = parse_double(key, v);
  } else if (key == "beta1") {
    beta1 = parse_double(key, v);
  } else if (key == "beta2") {
    beta2 = parse_double(key, v);
  } else if (key == "eps") {
    eps = parse_double(key, v);
  } else if (key == "data") {
    data = v;
  } else if (key == "schema") {
    schema = v;
  } else if (key == "val_data") {
    val_data = v;
  } else if (key == "val_fraction") {
    val_fraction = parse_double(key, v);
  } else if (key == "model_in") {
    model_in = v;
  } else if (key == "out_dir") {
    out_dir = v;
  } else if (key == "threads") {
    threads = parse_uint(key, v);
  } else if (key == "deterministic") {
    deterministic = parse_bool(key, v);
  } else if (key == "quantile_bins") {
    quantile_bins = parse_uint(key, v);
  } else if (key == "target_smoothing") {
    target_smoothing = parse_double(key, v);
  } else if (key == "explain_bins") {
    explain_bins = parse_uint(key, v);
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected 'key = value', got '" + line + "'");
    apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_text(buf.str());
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "mode = " << mode << "\n";
  out << "arch = " << arch << "\n";
  out << "num_layers = " << num_layers << "\n";
  out << "num_trees = " << num_trees << "\n";
  out << "total_trees = " << total_trees << "\n";
  out << "depth = " << depth << "\n";
  out << "addi_tree_dim = " << addi_tree_dim << "\n";
  out << "output_dropout = " << format_double(output_dropout) << "\n";
  out << "last_dropout = " << format_double(last_dropout) << "\n";
  out << "colsample = " << format_double(colsample) << "\n";
  out << "l2_lambda = " << format_double(l2_lambda) << "\n";
  out << "dim_att = " << dim_att << "\n";
  out << "anneal_steps = " << anneal_steps << "\n";
  out << "min_temperature = " << format_double(min_temperature) << "\n";
  out << "add_last_linear = " << (add_last_linear ? 1 : 0) << "\n";
  out << "task = " << task << "\n";
  out << "lr = " << format_double(lr) << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "warmup_steps = " << warmup_steps << "\n";
  out << "plateau_patience_steps = " << plateau_patience_steps << "\n";
  out << "plateau_decay_factor = " << format_double(plateau_decay_factor) << "\n";
  out << "early_stop_steps = " << early_stop_steps << "\n";
  out << "checkpoint_count = " << checkpoint_count << "\n";
  out << "checkpoint_interval_steps = " << checkpoint_interval_steps << "\n";
  out << "max_train_hours = " << format_double(max_train_hours) << "\n";
  out << "eval_interval_steps = " << eval_interval_steps << "\n";
  out << "max_steps = " << max_steps << "\n";
  out << "seed = " << seed << "\n";
  out << "mask_rate = " << format_double(mask_rate) << "\n";
  out << "freeze_steps = " << freeze_steps << "\n";
  out << "qh_nu1 = " << format_double(qh_nu1) << "\n";
  out << "qh_nu2 = " << format_double(qh_nu2) << "\n";
  out << "beta1 = " << format_double(beta1) << "\n";
  out << "beta2 = " << format_double(beta2) << "\n";
  out << "eps = " << format_double(eps) << "\n";
  out << "data = " << data << "\n";
  out << "schema = " << schema << "\n";
  out << "val_data = " << val_data << "\n";
  out << "val_fraction = " << format_double(val_fraction) << "\n";
  out << "model_in = " << model_in << "\n";
  out << "out_dir = " << out_dir << "\n";
  out << "threads = " << threads << "\n";
  out << "deterministic = " << (deterministic ? 1 : 0) << "\n";
  out << "quantile_bins = " << quantile_bins << "\n";
  out << "target_smoothing = " << format_double(target_smoothing) << "\n";
  out << "explain_bins = " << explain_bins << "\n";
  return out.str();
}

ModelConfig RunConfig::model_config(std::size_t num_features, std::size_t num_outputs,
                                    Task task_kind) const {
  ModelConfig cfg;
  cfg.mode = mode == "ga2m" ? GamMode::ga2m : GamMode::gam;
  cfg.arch = arch == "attention" ? Arch::attention : Arch::plain;
  cfg.num_layers = num_layers;
  cfg.trees_per_layer = trees_per_layer();
  cfg.depth = depth;
  cfg.addi_tree_dim = addi_tree_dim;
  cfg.output_dropout = output_dropout;
  cfg.last_dropout = last_dropout;
  cfg.colsample = colsample;
  cfg.l2_lambda = l2_lambda;
  cfg.attention_dim = dim_att;
  cfg.anneal_steps = anneal_steps;
  cfg.min_temperature = min_temperature;
  cfg.num_features = num_features;
  cfg.num_outputs = num_outputs;
  cfg.task = task_kind;
  cfg.add_last_linear = add_last_linear;
  cfg.validate();
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.lr = lr;
  cfg.batch_size = batch_size;
  cfg.warmup_steps = warmup_steps;
  cfg.plateau_patience_steps = plateau_patience_steps;
  cfg.plateau_decay_factor = plateau_decay_factor;
  cfg.early_stop_steps = early_stop_steps;
  cfg.checkpoint_count = checkpoint_count;
  cfg.checkpoint_interval_steps = checkpoint_interval_steps;
  cfg.max_train_hours = max_train_hours;
  cfg.eval_interval_steps = eval_interval_steps;
  cfg.max_steps = max_steps;
  cfg.seed = seed;
  cfg.mask_rate = mask_rate;
  cfg.freeze_steps = freeze_steps;
  cfg.optimizer.nu1 = qh_nu1;
  cfg.optimizer.nu2 = qh_nu2;
  cfg.optimizer.beta1 = beta1;
  cfg.optimizer.beta2 = beta2;
  cfg.optimizer.eps = eps;
  cfg.validate();
  return cfg;
}

}  // namespace nodegam
