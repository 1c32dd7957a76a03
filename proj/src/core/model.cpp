#include "core/model.hpp"

#include <cmath>

namespace ckconv {

HeadKind head_from_string(const std::string& s) {
  if (s == "seq_label") return HeadKind::seq_label;
  if (s == "seq_seq") return HeadKind::seq_seq;
  fail(ErrorKind::config, "unknown head '" + s + "' (expected seq_label|seq_seq)");
}

std::string to_string(HeadKind h) { return h == HeadKind::seq_label ? "seq_label" : "seq_seq"; }

nlohmann::json CkcnnConfig::to_json() const {
  return nlohmann::json{{"in_channels", in_channels},
                        {"out_dim", out_dim},
                        {"num_blocks", num_blocks},
                        {"hidden_channels", hidden_channels},
                        {"omega0", omega0},
                        {"dropout", dropout},
                        {"input_dropout", input_dropout},
                        {"backbone", to_string(backbone)},
                        {"kernel_nonlinearity", to_string(kernel_nonlinearity)},
                        {"kernel_hidden", kernel_hidden},
                        {"kernel_depth", kernel_depth},
                        {"horizon", horizon},
                        {"head", to_string(head)},
                        {"train_max_len", train_max_len}};
}

CkcnnConfig CkcnnConfig::from_json(const nlohmann::json& j) {
  CkcnnConfig cfg;
  try {
    if (j.contains("in_channels")) cfg.in_channels = j.at("in_channels").get<int>();
    if (j.contains("out_dim")) cfg.out_dim = j.at("out_dim").get<int>();
    if (j.contains("num_blocks")) cfg.num_blocks = j.at("num_blocks").get<int>();
    if (j.contains("hidden_channels")) cfg.hidden_channels = j.at("hidden_channels").get<int>();
    if (j.contains("omega0")) cfg.omega0 = j.at("omega0").get<double>();
    if (j.contains("dropout")) cfg.dropout = j.at("dropout").get<double>();
    if (j.contains("input_dropout")) cfg.input_dropout = j.at("input_dropout").get<double>();
    if (j.contains("backbone")) cfg.backbone = nonlinearity_from_string(j.at("backbone").get<std::string>());
    if (j.contains("kernel_nonlinearity"))
      cfg.kernel_nonlinearity = nonlinearity_from_string(j.at("kernel_nonlinearity").get<std::string>());
    if (j.contains("kernel_hidden")) cfg.kernel_hidden = j.at("kernel_hidden").get<int>();
    if (j.contains("kernel_depth")) cfg.kernel_depth = j.at("kernel_depth").get<int>();
    if (j.contains("horizon")) cfg.horizon = j.at("horizon").get<int64_t>();
    if (j.contains("head")) cfg.head = head_from_string(j.at("head").get<std::string>());
    if (j.contains("train_max_len")) cfg.train_max_len = j.at("train_max_len").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("model config: ") + e.what());
  }
  return cfg;
}

namespace {

void validate(const CkcnnConfig& cfg) {
  if (cfg.in_channels < 1) fail(ErrorKind::config, "model: in_channels must be >= 1");
  if (cfg.out_dim < 1) fail(ErrorKind::config, "model: out_dim must be >= 1");
  if (cfg.num_blocks < 1) fail(ErrorKind::config, "model: num_blocks must be >= 1");
  if (cfg.hidden_channels < 1) fail(ErrorKind::config, "model: hidden_channels must be >= 1");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) fail(ErrorKind::config, "model: dropout must be in [0,1)");
  if (cfg.input_dropout < 0.0 || cfg.input_dropout >= 1.0)
    fail(ErrorKind::config, "model: input_dropout must be in [0,1)");
  if (cfg.train_max_len < 1) fail(ErrorKind::config, "model: train_max_len must be >= 1");
  if (cfg.horizon < 0) fail(ErrorKind::config, "model: horizon must be 0 (global) or positive");
  // kernel net constructor validates hidden/depth/omega0
}

int64_t kernel_net_param_count(int out_ch, int in_ch, int hidden, int depth) {
  std::vector<int64_t> widths;
  widths.push_back(1);
  for (int l = 0; l < depth - 1; ++l) widths.push_back(hidden);
  widths.push_back(static_cast<int64_t>(out_ch) * in_ch);
  int64_t total = 0;
  for (size_t l = 1; l < widths.size(); ++l) total += widths[l] * widths[l - 1] + 2 * widths[l];
  return total;
}

void init_fan_in_uniform(Tensor& w, Tensor& b, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(w.dim(1)));
  for (int64_t i = 0; i < w.numel(); ++i) w.ptr()[i] = rng.uniform(-bound, bound);
  for (int64_t i = 0; i < b.numel(); ++i) b.ptr()[i] = rng.uniform(-bound, bound);
}

Tensor activate(const Tensor& x, Nonlinearity nl, Tape* tape) {
  switch (nl) {
    case Nonlinearity::sine: return sine(x, tape);
    case Nonlinearity::relu: return relu(x, tape);
    case Nonlinearity::leaky_relu: return leaky_relu(x, 0.01, tape);
    case Nonlinearity::swish: return swish(x, tape);
  }
  fail(ErrorKind::internal, "unhandled nonlinearity");
}

}  // namespace

CkcnnModel::CkcnnModel(const CkcnnConfig& cfg) : cfg_(cfg) {
  validate(cfg);
  blocks_.resize(static_cast<size_t>(cfg.num_blocks));
  for (int i = 0; i < cfg.num_blocks; ++i) {
    CkcnnBlock& blk = blocks_[static_cast<size_t>(i)];
    const int block_in = i == 0 ? cfg.in_channels : cfg.hidden_channels;
    blk.conv1 = CkconvLayer(cfg.hidden_channels, block_in, cfg.train_max_len, cfg.horizon,
                            cfg.kernel_hidden, cfg.kernel_depth, cfg.kernel_nonlinearity, cfg.omega0);
    blk.conv2 = CkconvLayer(cfg.hidden_channels, cfg.hidden_channels, cfg.train_max_len, cfg.horizon,
                            cfg.kernel_hidden, cfg.kernel_depth, cfg.kernel_nonlinearity, cfg.omega0);
    blk.norm1_gain = Tensor::full({cfg.hidden_channels}, 1.0, true);
    blk.norm1_bias = Tensor::zeros({cfg.hidden_channels}, true);
    blk.norm2_gain = Tensor::full({cfg.hidden_channels}, 1.0, true);
    blk.norm2_bias = Tensor::zeros({cfg.hidden_channels}, true);
    blk.has_shortcut = block_in != cfg.hidden_channels;
    if (blk.has_shortcut) {
      blk.shortcut_w = Tensor::zeros({cfg.hidden_channels, block_in}, true);
      blk.shortcut_b = Tensor::zeros({cfg.hidden_channels}, true);
    }
  }
  head_w = Tensor::zeros({cfg.out_dim, cfg.hidden_channels}, true);
  head_b = Tensor::zeros({cfg.out_dim}, true);
}

void CkcnnModel::init(Rng& rng) {
  for (CkcnnBlock& blk : blocks_) {
    for (CkconvLayer* conv : {&blk.conv1, &blk.conv2}) {
      switch (cfg_.kernel_nonlinearity) {
        case Nonlinearity::sine: conv->net.init_siren(rng); break;
        case Nonlinearity::relu:
        case Nonlinearity::leaky_relu: conv->net.init_uniform_knots(rng); break;
        case Nonlinearity::swish: conv->net.init_zero_bias(rng); break;
      }
      for (int64_t i = 0; i < conv->bias.numel(); ++i) conv->bias.ptr()[i] = 0.0;
    }
    if (blk.has_shortcut) init_fan_in_uniform(blk.shortcut_w, blk.shortcut_b, rng);
    for (int64_t i = 0; i < blk.norm1_gain.numel(); ++i) {
      blk.norm1_gain.ptr()[i] = 1.0;
      blk.norm1_bias.ptr()[i] = 0.0;
      blk.norm2_gain.ptr()[i] = 1.0;
      blk.norm2_bias.ptr()[i] = 0.0;
    }
  }
  init_fan_in_uniform(head_w, head_b, rng);
  note_params_updated();
}

Tensor CkcnnModel::forward(const Tensor& x, const Resample& rs, bool train_time, Tape* tape,
                           Rng* dropout_rng) const {
  if (x.rank() != 3) fail(ErrorKind::dimension, "model forward: expects x:[B,C,T]");
  if (x.dim(1) != cfg_.in_channels)
    fail(ErrorKind::dimension, "model forward: " + std::to_string(x.dim(1)) + " input channels, model has " +
                                   std::to_string(cfg_.in_channels));
  const bool dropping = train_time && (cfg_.dropout > 0.0 || cfg_.input_dropout > 0.0);
  if (dropping && dropout_rng == nullptr)
    fail(ErrorKind::contract, "model forward: dropout is active but no rng was supplied");
  Rng dummy(0);
  Rng& drng = dropout_rng ? *dropout_rng : dummy;

  Tensor h = x;
  if (cfg_.input_dropout > 0.0) h = dropout(h, cfg_.input_dropout, train_time, drng, tape);
  for (const CkcnnBlock& blk : blocks_) {
    Tensor shortcut =
        blk.has_shortcut ? channel_linear(h, blk.shortcut_w, blk.shortcut_b, tape) : h;
    Tensor z = blk.conv1.forward(h, rs, train_time, tape);
    z = layer_norm(z, blk.norm1_gain, blk.norm1_bias, tape);
    z = activate(z, cfg_.backbone, tape);
    if (cfg_.dropout > 0.0) z = dropout(z, cfg_.dropout, train_time, drng, tape);
    z = blk.conv2.forward(z, rs, train_time, tape);
    z = layer_norm(z, blk.norm2_gain, blk.norm2_bias, tape);
    if (cfg_.dropout > 0.0) z = dropout(z, cfg_.dropout, train_time, drng, tape);
    h = activate(add(z, shortcut, tape), cfg_.backbone, tape);
  }
  if (cfg_.head == HeadKind::seq_label) return linear(last_step(h, tape), head_w, head_b, tape);
  return channel_linear(h, head_w, head_b, tape);
}

std::vector<NamedParam> CkcnnModel::params() {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    CkcnnBlock& blk = blocks_[i];
    const std::string base = "block" + std::to_string(i);
    for (auto& p : blk.conv1.params(base + ".conv1")) out.push_back(p);
    for (auto& p : blk.conv2.params(base + ".conv2")) out.push_back(p);
    out.push_back({base + ".norm1.gain", blk.norm1_gain});
    out.push_back({base + ".norm1.bias", blk.norm1_bias});
    out.push_back({base + ".norm2.gain", blk.norm2_gain});
    out.push_back({base + ".norm2.bias", blk.norm2_bias});
    if (blk.has_shortcut) {
      out.push_back({base + ".shortcut.w", blk.shortcut_w});
      out.push_back({base + ".shortcut.b", blk.shortcut_b});
    }
  }
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

int64_t CkcnnModel::param_count() {
  int64_t total = 0;
  for (auto& p : params()) total += p.tensor.numel();
  return total;
}

int64_t CkcnnModel::analytic_param_count(const CkcnnConfig& cfg) {
  int64_t total = 0;
  for (int i = 0; i < cfg.num_blocks; ++i) {
    const int block_in = i == 0 ? cfg.in_channels : cfg.hidden_channels;
    total += kernel_net_param_count(cfg.hidden_channels, block_in, cfg.kernel_hidden, cfg.kernel_depth) +
             cfg.hidden_channels;  // conv1 net + conv bias
    total += kernel_net_param_count(cfg.hidden_channels, cfg.hidden_channels, cfg.kernel_hidden,
                                    cfg.kernel_depth) +
             cfg.hidden_channels;  // conv2
    total += 4 * cfg.hidden_channels;  // two layer norms
    if (block_in != cfg.hidden_channels)
      total += static_cast<int64_t>(cfg.hidden_channels) * block_in + cfg.hidden_channels;
  }
  total += static_cast<int64_t>(cfg.out_dim) * cfg.hidden_channels + cfg.out_dim;  // head
  return total;
}

std::vector<std::string> CkcnnModel::warnings() const {
  std::vector<std::string> out;
  if (cfg_.kernel_nonlinearity == Nonlinearity::sine && (cfg_.omega0 < 1.0 || cfg_.omega0 > 70.0))
    out.push_back("omega0=" + std::to_string(cfg_.omega0) +
                  " lies outside [1, 70]; sine kernels tend to train poorly there");
  return out;
}

void CkcnnModel::note_params_updated() {
  for (CkcnnBlock& blk : blocks_) {
    blk.conv1.net.bump_version();
    blk.conv2.net.bump_version();
    blk.conv1.invalidate_cache();
    blk.conv2.invalidate_cache();
  }
}

nlohmann::json CkcnnModel::to_json() {
  nlohmann::json params_json = nlohmann::json::object();
  for (auto& p : params())
    params_json[p.name] = std::vector<double>(p.tensor.ptr(), p.tensor.ptr() + p.tensor.numel());
  return nlohmann::json{{"format", "ckconv-model"}, {"config", cfg_.to_json()}, {"params", params_json}};
}

CkcnnModel CkcnnModel::from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "ckconv-model")
    fail(ErrorKind::data, "model checkpoint: missing or wrong format marker");
  if (!j.contains("config") || !j.contains("params"))
    fail(ErrorKind::data, "model checkpoint: config or params section missing");
  CkcnnModel model(CkcnnConfig::from_json(j.at("config")));
  const nlohmann::json& pj = j.at("params");
  for (auto& p : model.params()) {
    if (!pj.contains(p.name)) fail(ErrorKind::data, "model checkpoint: parameter '" + p.name + "' missing");
    std::vector<double> vals;
    try {
      vals = pj.at(p.name).get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::data, "model checkpoint: parameter '" + p.name + "': " + e.what());
    }
    if (static_cast<int64_t>(vals.size()) != p.tensor.numel())
      fail(ErrorKind::data, "model checkpoint: parameter '" + p.name + "' has " +
                                std::to_string(vals.size()) + " values, expected " +
                                std::to_string(p.tensor.numel()));
    for (int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.ptr()[i] = vals[static_cast<size_t>(i)];
  }
  model.note_params_updated();
  return model;
}

}  // namespace ckconv
