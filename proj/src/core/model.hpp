#ifndef CKCONV_CORE_MODEL_HPP_
#define CKCONV_CORE_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/conv.hpp"
#include "core/kernel_net.hpp"
#include "core/tensor.hpp"

namespace ckconv {

// What the network emits: one label per sequence (features at the last step
// through a linear map) or one output vector per time step.
enum class HeadKind { seq_label, seq_seq };
HeadKind head_from_string(const std::string& s);  // config error on unknown
std::string to_string(HeadKind h);

struct CkcnnConfig {
  int in_channels = 1;
  int out_dim = 1;
  int num_blocks = 2;
  int hidden_channels = 30;
  double omega0 = 30.0;             // sine frequency of the kernel nets
  double dropout = 0.0;             // inside residual blocks
  double input_dropout = 0.0;       // on the raw input
  Nonlinearity backbone = Nonlinearity::relu;            // between convolutions
  Nonlinearity kernel_nonlinearity = Nonlinearity::sine;  // inside kernel nets
  int kernel_hidden = 32;
  int kernel_depth = 3;
  int64_t horizon = 0;      // kernel length cap; 0 = span the whole input
  HeadKind head = HeadKind::seq_label;
  int64_t train_max_len = 0;  // N of the position map, fixed at train time

  nlohmann::json to_json() const;
  static CkcnnConfig from_json(const nlohmann::json& j);  // config error on bad fields
};

// One residual block: two continuous-kernel convolutions with layer norm,
// activation and dropout between them, plus a pointwise shortcut whenever the
// channel count changes.
struct CkcnnBlock {
  CkconvLayer conv1, conv2;
  Tensor norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  bool has_shortcut = false;
  Tensor shortcut_w, shortcut_b;  // [out_ch, in_ch], [out_ch]
};

class CkcnnModel {
 public:
  CkcnnModel() = default;
  explicit CkcnnModel(const CkcnnConfig& cfg);  // validates and allocates
  void init(Rng& rng);                          // seeded parameter draw

  // x:[B, in_channels, T] -> [B, out_dim] (seq_label) or [B, out_dim, T]
  // (seq_seq). dropout_rng may be null when no dropout is active.
  Tensor forward(const Tensor& x, const Resample& rs, bool train_time, Tape* tape = nullptr,
                 Rng* dropout_rng = nullptr) const;

  std::vector<NamedParam> params();
  int64_t param_count();  // registry total; equals analytic_param_count(config())
  static int64_t analytic_param_count(const CkcnnConfig& cfg);

  // Non-fatal configuration observations (e.g. omega0 outside the range that
  // trains reliably).
  std::vector<std::string> warnings() const;

  // Call after an in-place parameter update so cached kernels re-render.
  void note_params_updated();

  nlohmann::json to_json();                              // config + every parameter
  static CkcnnModel from_json(const nlohmann::json& j);  // data error on mismatch

  const CkcnnConfig& config() const { return cfg_; }
  std::vector<CkcnnBlock>& blocks() { return blocks_; }

 private:
  CkcnnConfig cfg_;
  std::vector<CkcnnBlock> blocks_;
  Tensor head_w, head_b;
};

}  // namespace ckconv

#endif  // CKCONV_CORE_MODEL_HPP_
