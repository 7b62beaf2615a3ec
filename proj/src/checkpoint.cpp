#include "latentlab/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

namespace latentlab {

using nlohmann::json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[v & 63] : '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw DataError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad > 0 || (v[k] = b64_value(c)) < 0) throw DataError("base64: invalid character");
    }
    const std::uint32_t w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(w >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(w));
  }
  return out;
}

std::string encode_doubles(std::span<const double> values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 8);
  for (double d : values) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  return base64_encode(bytes);
}

std::vector<double> decode_doubles(const std::string& text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw DataError("checkpoint: blob is not a whole number of doubles");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

namespace {

class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw DataError(where_ + ": expected a JSON object");
  }
  ~Fields() = default;

  template <typename T>
  Fields& get(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return *this;
    const json& v = j_.at(key);
    const std::string name = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw DataError(name + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw DataError(name + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw DataError(name + ": expected a number");
    } else {
      if (!v.is_string()) throw DataError(name + ": expected a string");
    }
    out = v.get<T>();
    return *this;
  }

  const json* sub(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!known_.count(k)) throw DataError(where_ + "." + k + ": unknown field");
  }

  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> known_;
};

}  // namespace

json to_json(const OptimizerConfig& c) {
  return {{"kind", optimizer_name(c.kind)}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

OptimizerConfig optimizer_from_json(const json& j, OptimizerConfig base, const std::string& where) {
  Fields f(j, where);
  std::string kind = optimizer_name(base.kind);
  f.get("kind", kind).get("learning_rate", base.learning_rate).get("beta1", base.beta1);
  f.get("beta2", base.beta2).get("epsilon", base.epsilon);
  f.finish();
  try {
    base.kind = parse_optimizer(kind);
  } catch (const std::exception& e) {
    throw DataError(where + ".kind: " + e.what());
  }
  if (!(base.learning_rate > 0.0)) throw DataError(where + ".learning_rate: must be positive");
  return base;
}

json to_json(const VaeConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"head_dim", c.head_dim},
          {"ffn_dim", c.ffn_dim},
          {"max_len", c.max_len},
          {"vocab_size", c.vocab_size},
          {"beta_mode", c.beta_mode == BetaMode::kCyclical ? "cyclical" : "constant"},
          {"beta_constant", c.beta_constant},
          {"beta_cycles", c.beta_cycles},
          {"ramp_fraction", c.ramp_fraction},
          {"kl_threshold", c.kl_threshold},
          {"optimizer", to_json(c.optimizer)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"freeze_decoder_hidden", c.freeze_decoder_hidden},
          {"head_train_epochs", c.head_train_epochs},
          {"separate_kv", c.separate_kv},
          {"bottleneck", c.bottleneck == Bottleneck::kGaussian ? "gaussian" : "vq"},
          {"codebook_size", c.codebook_size},
          {"commitment", c.commitment},
          {"seed", c.seed}};
}

VaeConfig vae_config_from_json(const json& j, VaeConfig base, const std::string& where) {
  Fields f(j, where);
  std::string beta_mode = base.beta_mode == BetaMode::kCyclical ? "cyclical" : "constant";
  std::string bottleneck = base.bottleneck == Bottleneck::kGaussian ? "gaussian" : "vq";
  f.get("latent_dim", base.latent_dim).get("embed_dim", base.embed_dim).get("n_layers", base.n_layers);
  f.get("n_heads", base.n_heads).get("head_dim", base.head_dim).get("ffn_dim", base.ffn_dim);
  f.get("max_len", base.max_len).get("vocab_size", base.vocab_size).get("beta_mode", beta_mode);
  f.get("beta_constant", base.beta_constant).get("beta_cycles", base.beta_cycles);
  f.get("ramp_fraction", base.ramp_fraction).get("kl_threshold", base.kl_threshold);
  f.get("epochs", base.epochs).get("batch_size", base.batch_size);
  f.get("freeze_decoder_hidden", base.freeze_decoder_hidden).get("head_train_epochs", base.head_train_epochs);
  f.get("separate_kv", base.separate_kv).get("bottleneck", bottleneck);
  f.get("codebook_size", base.codebook_size).get("commitment", base.commitment).get("seed", base.seed);
  if (const json* opt = f.sub("optimizer")) base.optimizer = optimizer_from_json(*opt, base.optimizer, where + ".optimizer");
  f.finish();
  if (beta_mode == "cyclical") base.beta_mode = BetaMode::kCyclical;
  else if (beta_mode == "constant") base.beta_mode = BetaMode::kConstant;
  else throw DataError(where + ".beta_mode: expected cyclical or constant");
  if (bottleneck == "gaussian") base.bottleneck = Bottleneck::kGaussian;
  else if (bottleneck == "vq") base.bottleneck = Bottleneck::kVq;
  else throw DataError(where + ".bottleneck: expected gaussian or vq");
  return base;
}

json to_json(const FlowConfig& c) {
  return {{"dim", c.dim}, {"depth", c.depth}, {"additive", c.additive}, {"dropout", c.dropout},
          {"coupling_init", c.coupling_init}, {"seed", c.seed}};
}

FlowConfig flow_config_from_json(const json& j, FlowConfig base, const std::string& where) {
  Fields f(j, where);
  f.get("dim", base.dim).get("depth", base.depth).get("additive", base.additive);
  f.get("dropout", base.dropout).get("coupling_init", base.coupling_init).get("seed", base.seed);
  f.finish();
  return base;
}

json to_json(const MetricsConfig& c) {
  return {{"bins", c.bins},
          {"zmv_trials", c.zmv_trials},
          {"zmv_batch", c.zmv_batch},
          {"zmv_train_fraction", c.zmv_train_fraction},
          {"lasso_alpha", c.lasso_alpha},
          {"lasso_iterations", c.lasso_iterations},
          {"dci_train_fraction", c.dci_train_fraction},
          {"seed", c.seed}};
}

MetricsConfig metrics_config_from_json(const json& j, MetricsConfig base, const std::string& where) {
  Fields f(j, where);
  f.get("bins", base.bins).get("zmv_trials", base.zmv_trials).get("zmv_batch", base.zmv_batch);
  f.get("zmv_train_fraction", base.zmv_train_fraction).get("lasso_alpha", base.lasso_alpha);
  f.get("lasso_iterations", base.lasso_iterations).get("dci_train_fraction", base.dci_train_fraction);
  f.get("seed", base.seed);
  f.finish();
  return base;
}

json to_json(const InnTrainConfig& c) {
  return {{"direction", direction_name(c.direction)}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"optimizer", to_json(c.optimizer)}, {"seed", c.seed}};
}

InnTrainConfig inn_config_from_json(const json& j, InnTrainConfig base, const std::string& where) {
  Fields f(j, where);
  std::string direction = direction_name(base.direction);
  f.get("direction", direction).get("epochs", base.epochs).get("batch_size", base.batch_size);
  f.get("seed", base.seed);
  if (const json* opt = f.sub("optimizer")) base.optimizer = optimizer_from_json(*opt, base.optimizer, where + ".optimizer");
  f.finish();
  try {
    base.direction = parse_direction(direction);
  } catch (const std::exception& e) {
    throw DataError(where + ".direction: " + e.what());
  }
  return base;
}

json to_json(const InferenceTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", to_json(c.optimizer)},
          {"latent_weight", c.latent_weight},
          {"decode_weight", c.decode_weight},
          {"seed", c.seed}};
}

InferenceTrainConfig inference_config_from_json(const json& j, InferenceTrainConfig base,
                                                const std::string& where) {
  Fields f(j, where);
  f.get("epochs", base.epochs).get("batch_size", base.batch_size).get("latent_weight", base.latent_weight);
  f.get("decode_weight", base.decode_weight).get("seed", base.seed);
  if (const json* opt = f.sub("optimizer")) base.optimizer = optimizer_from_json(*opt, base.optimizer, where + ".optimizer");
  f.finish();
  return base;
}

json params_to_json(const ParameterStore& params) {
  json out = json::object();
  for (const auto& [name, t] : params) {
    auto v = t.values();
    out[name] = {{"shape", t.shape()}, {"data", encode_doubles(v)}};
  }
  return out;
}

void params_from_json(ParameterStore& params, const json& j) {
  if (!j.is_object()) throw DataError("checkpoint: 'params' must be an object");
  std::vector<std::vector<double>> staged;
  for (const auto& [name, t] : params) {
    if (!j.contains(name)) throw DataError("checkpoint: missing parameter '" + name + "'");
    const json& e = j.at(name);
    Shape shape;
    std::string data;
    try {
      shape = e.at("shape").get<Shape>();
      data = e.at("data").get<std::string>();
    } catch (const json::exception&) {
      throw DataError("checkpoint: parameter '" + name + "' is malformed");
    }
    if (shape != t.shape()) {
      throw DataError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(t.shape()));
    }
    std::vector<double> values;
    try {
      values = decode_doubles(data);
    } catch (const DataError& err) {
      throw DataError("checkpoint: parameter '" + name + "': " + err.what());
    }
    if (values.size() != t.numel())
      throw DataError("checkpoint: parameter '" + name + "' has " + std::to_string(values.size()) + " values");
    staged.push_back(std::move(values));
  }
  for (const auto& [name, _] : j.items())
    if (!params.find(name)) throw DataError("checkpoint: unexpected parameter '" + name + "'");
  std::size_t i = 0;
  for (auto& [name, t] : params) {
    auto dst = t.mutable_values();
    std::copy(staged[i].begin(), staged[i].end(), dst.begin());
    ++i;
  }
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw DataError(path + ": invalid JSON (" + e.what() + ")");
  }
}

namespace {

const json& checkpoint_body(const json& j, const std::string& kind, const std::string& path) {
  if (!j.is_object() || !j.contains("format_version") || !j.contains("kind"))
    throw DataError(path + ": not a checkpoint (missing format_version/kind)");
  if (!j.at("format_version").is_number_integer() || j.at("format_version").get<int>() != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint format_version " + j.at("format_version").dump() +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  if (j.at("kind") != kind)
    throw DataError(path + ": checkpoint kind " + j.at("kind").dump() + ", expected \"" + kind + "\"");
  for (const char* key : {"config", "params"})
    if (!j.contains(key)) throw DataError(path + ": checkpoint is missing '" + key + "'");
  return j;
}

}  // namespace

void save_vae(const std::string& path, const VaeModel& model) {
  json j{{"format_version", kCheckpointVersion},
         {"kind", "vae"},
         {"config", to_json(model.config())},
         {"vocab", model.vocab().tokens()},
         {"params", params_to_json(model.params())}};
  write_json_file(path, j);
}

VaeModel load_vae(const std::string& path) {
  const json j = read_json_file(path);
  checkpoint_body(j, "vae", path);
  if (!j.contains("vocab")) throw DataError(path + ": checkpoint is missing 'vocab'");
  VaeConfig cfg = vae_config_from_json(j.at("config"), VaeConfig{}, "config");
  std::vector<std::string> tokens;
  try {
    tokens = j.at("vocab").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw DataError(path + ": 'vocab' must be a list of strings");
  }
  VaeModel model(cfg, Vocab::from_tokens(std::move(tokens)));
  params_from_json(model.params(), j.at("params"));
  return model;
}

void save_flow(const std::string& path, const FlowStack& stack) {
  json j{{"format_version", kCheckpointVersion},
         {"kind", "flow"},
         {"config", to_json(stack.config())},
         {"actnorm_initialized", stack.actnorm_initialized()},
         {"params", params_to_json(stack.params())}};
  write_json_file(path, j);
}

FlowStack load_flow(const std::string& path) {
  const json j = read_json_file(path);
  checkpoint_body(j, "flow", path);
  FlowStack stack(flow_config_from_json(j.at("config"), FlowConfig{}, "config"));
  params_from_json(stack.params(), j.at("params"));
  if (j.value("actnorm_initialized", false)) stack.mark_initialized();
  return stack;
}

void save_inference_head(const std::string& path, const InferenceHead& head) {
  json j{{"format_version", kCheckpointVersion},
         {"kind", "inference-head"},
         {"config", {{"latent_dim", head.latent_dim()}}},
         {"params", params_to_json(head.params())}};
  write_json_file(path, j);
}

InferenceHead load_inference_head(const std::string& path) {
  const json j = read_json_file(path);
  checkpoint_body(j, "inference-head", path);
  std::size_t latent = 0;
  Fields f(j.at("config"), "config");
  f.get("latent_dim", latent);
  f.finish();
  InferenceHead head(latent, 0);
  params_from_json(head.params(), j.at("params"));
  return head;
}

}  // namespace latentlab
