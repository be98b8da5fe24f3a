#include "nodegam/model_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nodegam/errors.hpp"

namespace nodegam {
namespace {

constexpr char kMagic[4] = {'N', 'G', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  void bytes(std::span<const std::uint8_t> v) {
    u64(v.size());
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size());
  }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    for (double d : m.flat()) f64(d);
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::size_t off) : buf_(buf), pos_(off) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    std::vector<double> v(n);
    for (std::uint64_t i = 0; i < n; ++i) v[i] = f64();
    return v;
  }
  std::vector<std::uint8_t> bytes() {
    const std::uint64_t n = u64();
    need(n);
    std::vector<std::uint8_t> v(n);
    std::memcpy(v.data(), buf_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  Matrix matrix() {
    const std::uint64_t rows = u64();
    const std::uint64_t cols = u64();
    std::vector<double> data(rows * cols);
    for (auto& d : data) d = f64();
    return Matrix(rows, cols, std::move(data));
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw schema_error("model file: truncated");
  }
  const std::string& buf_;
  std::size_t pos_;
};

std::uint32_t crc_table_entry(std::uint32_t i) {
  std::uint32_t c = i;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

const std::uint32_t* crc_table() {
  static std::uint32_t table[256];
  static bool init = [] {
    for (std::uint32_t i = 0; i < 256; ++i) table[i] = crc_table_entry(i);
    return true;
  }();
  (void)init;
  return table;
}

nlohmann::json config_to_json(const ModelConfig& cfg, std::uint64_t step,
                              const std::map<std::string, std::string>& meta) {
  nlohmann::json j;
  j["mode"] = cfg.mode == GamMode::ga2m ? "ga2m" : "gam";
  j["arch"] = cfg.arch == Arch::attention ? "attention" : "plain";
  j["num_layers"] = cfg.num_layers;
  j["trees_per_layer"] = cfg.trees_per_layer;
  j["depth"] = cfg.depth;
  j["addi_tree_dim"] = cfg.addi_tree_dim;
  j["output_dropout"] = cfg.output_dropout;
  j["last_dropout"] = cfg.last_dropout;
  j["colsample"] = cfg.colsample;
  j["l2_lambda"] = cfg.l2_lambda;
  j["attention_dim"] = cfg.attention_dim;
  j["anneal_steps"] = cfg.anneal_steps;
  j["min_temperature"] = cfg.min_temperature;
  j["num_features"] = cfg.num_features;
  j["num_outputs"] = cfg.num_outputs;
  j["task"] = cfg.task == Task::binary ? "binary" : "regression";
  j["add_last_linear"] = cfg.add_last_linear;
  j["step"] = step;
  j["meta"] = meta;
  return j;
}

void config_from_json(const nlohmann::json& j, ModelConfig& cfg, std::uint64_t& step,
                      std::map<std::string, std::string>& meta) {
  cfg.mode = j.at("mode").get<std::string>() == "ga2m" ? GamMode::ga2m : GamMode::gam;
  cfg.arch = j.at("arch").get<std::string>() == "attention" ? Arch::attention : Arch::plain;
  cfg.num_layers = j.at("num_layers").get<std::size_t>();
  cfg.trees_per_layer = j.at("trees_per_layer").get<std::size_t>();
  cfg.depth = j.at("depth").get<std::size_t>();
  cfg.addi_tree_dim = j.at("addi_tree_dim").get<std::size_t>();
  cfg.output_dropout = j.at("output_dropout").get<double>();
  cfg.last_dropout = j.at("last_dropout").get<double>();
  cfg.colsample = j.at("colsample").get<double>();
  cfg.l2_lambda = j.at("l2_lambda").get<double>();
  cfg.attention_dim = j.at("attention_dim").get<std::size_t>();
  cfg.anneal_steps = j.at("anneal_steps").get<std::size_t>();
  cfg.min_temperature = j.at("min_temperature").get<double>();
  cfg.num_features = j.at("num_features").get<std::size_t>();
  cfg.num_outputs = j.at("num_outputs").get<std::size_t>();
  cfg.task = j.at("task").get<std::string>() == "binary" ? Task::binary : Task::regression;
  cfg.add_last_linear = j.at("add_last_linear").get<bool>();
  step = j.at("step").get<std::uint64_t>();
  meta = j.at("meta").get<std::map<std::string, std::string>>();
}

void write_pipeline(ByteWriter& w, const Pipeline& pipe) {
  w.u8(pipe.fitted() ? 1 : 0);
  if (!pipe.fitted()) return;
  w.str(pipe.target_name());
  w.str(pipe.schema().to_text());
  w.u64(pipe.features().size());
  for (const Pipeline::Feature& f : pipe.features()) {
    w.str(f.name);
    w.u8(f.categorical ? 1 : 0);
    w.f64(f.impute_mean);
    w.u64(f.encoder.encoding.size());
    for (const auto& [cat, val] : f.encoder.encoding) {
      w.str(cat);
      w.f64(val);
    }
    w.f64(f.encoder.fallback);
    w.doubles(f.quantile.quantiles);
  }
}

Pipeline read_pipeline(ByteReader& r) {
  Pipeline pipe;
  if (r.u8() == 0) return pipe;
  const std::string target = r.str();
  const Schema schema = Schema::parse(r.str());
  const std::uint64_t nf = r.u64();
  for (std::uint64_t f = 0; f < nf; ++f) {
    Pipeline::Feature feat;
    feat.name = r.str();
    feat.categorical = r.u8() != 0;
    feat.impute_mean = r.f64();
    const std::uint64_t ne = r.u64();
    for (std::uint64_t e = 0; e < ne; ++e) {
      const std::string cat = r.str();
      feat.encoder.encoding[cat] = r.f64();
    }
    feat.encoder.fallback = r.f64();
    feat.quantile.quantiles = r.doubles();
    pipe.mutable_features().push_back(std::move(feat));
  }
  pipe.set_fitted(target, schema);
  return pipe;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t size) {
  const std::uint32_t* table = crc_table();
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint32_t c = 0xffffffffu;
  for (std::size_t i = 0; i < size; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

void atomic_write_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

void save_model(const std::string& path, const NodeGamModel& model, const Pipeline& pipeline,
                const std::map<std::string, std::string>& meta) {
  ByteWriter w;
  w.str(config_to_json(model.cfg, model.train_step, meta).dump());
  write_pipeline(w, pipeline);
  w.u64(model.layers.size());
  for (const GamTreeLayer& layer : model.layers) {
    w.matrix(layer.selection_logits);
    w.u8(model.cfg.mode == GamMode::ga2m ? 1 : 0);
    if (model.cfg.mode == GamMode::ga2m) w.matrix(layer.selection_logits2);
    w.matrix(layer.thresholds);
    w.matrix(layer.log_slopes);
    w.matrix(layer.leaf_response);
    w.bytes(layer.allowed);
    w.u8(layer.thresholds_ready ? 1 : 0);
  }
  w.u8(model.cfg.arch == Arch::attention ? 1 : 0);
  if (model.cfg.arch == Arch::attention) {
    for (std::size_t l = 1; l < model.layers.size(); ++l) {
      w.matrix(model.attn_b[l]);
      w.matrix(model.attn_c[l]);
    }
  }
  w.matrix(model.last_linear);
  w.doubles(model.w0);
  w.f64(model.output_bias);
  w.u64(model.train_step);

  std::string out;
  out.append(kMagic, 4);
  ByteWriter header;
  header.u32(kVersion);
  header.u64(w.buffer().size());
  out.append(header.buffer());
  out.append(w.buffer());
  ByteWriter crc;
  crc.u32(crc32(w.buffer().data(), w.buffer().size()));
  out.append(crc.buffer());
  atomic_write_file(path, out);
}

ModelBundle load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw schema_error("model file: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string data = buf.str();
  if (data.size() < 16 || std::memcmp(data.data(), kMagic, 4) != 0)
    throw schema_error("model file: bad magic");
  ByteReader header(data, 4);
  const std::uint32_t version = header.u32();
  if (version != kVersion)
    throw schema_error("model file: unsupported version " + std::to_string(version));
  const std::uint64_t payload_size = header.u64();
  const std::size_t payload_off = header.pos();
  if (payload_off + payload_size + 4 > data.size())
    throw schema_error("model file: truncated");
  ByteReader crc_reader(data, payload_off + payload_size);
  const std::uint32_t stored_crc = crc_reader.u32();
  if (crc32(data.data() + payload_off, payload_size) != stored_crc)
    throw schema_error("model file: checksum mismatch");

  ByteReader r(data, payload_off);
  ModelBundle bundle;
  ModelConfig cfg;
  std::uint64_t step = 0;
  const nlohmann::json j = nlohmann::json::parse(r.str());
  config_from_json(j, cfg, step, bundle.meta);
  bundle.pipeline = read_pipeline(r);

  NodeGamModel& model = bundle.model;
  model.cfg = cfg;
  const std::uint64_t num_layers = r.u64();
  if (num_layers != cfg.num_layers) throw schema_error("model file: layer count mismatch");
  LayerConfig lc;
  lc.mode = cfg.mode;
  lc.num_trees = cfg.trees_per_layer;
  lc.depth = cfg.depth;
  lc.response_dim = cfg.response_dim();
  lc.num_features = cfg.num_features;
  lc.colsample = cfg.colsample;
  for (std::uint64_t l = 0; l < num_layers; ++l) {
    GamTreeLayer layer;
    layer.cfg = lc;
    layer.selection_logits = r.matrix();
    if (r.u8()) layer.selection_logits2 = r.matrix();
    layer.thresholds = r.matrix();
    layer.log_slopes = r.matrix();
    layer.leaf_response = r.matrix();
    layer.allowed = r.bytes();
    layer.thresholds_ready = r.u8() != 0;
    if (layer.selection_logits.rows() != cfg.trees_per_layer ||
        layer.selection_logits.cols() != cfg.num_features)
      throw schema_error("model file: parameter shape mismatch");
    model.layers.push_back(std::move(layer));
  }
  model.attn_b.resize(num_layers);
  model.attn_c.resize(num_layers);
  if (r.u8()) {
    for (std::size_t l = 1; l < num_layers; ++l) {
      model.attn_b[l] = r.matrix();
      model.attn_c[l] = r.matrix();
    }
  }
  model.last_linear = r.matrix();
  model.w0 = r.doubles();
  model.output_bias = r.f64();
  model.train_step = r.u64();
  if (model.train_step != step) throw schema_error("model file: inconsistent step counter");
  return bundle;
}

}  // namespace nodegam
