#ifndef CKCONV_CORE_KERNEL_NET_HPP_
#define CKCONV_CORE_KERNEL_NET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace ckconv {

enum class Nonlinearity { sine, relu, leaky_relu, swish };

Nonlinearity nonlinearity_from_string(const std::string& s);  // config error on unknown
std::string to_string(Nonlinearity nl);
bool piecewise(Nonlinearity nl);  // true for the ReLU family

// Map a (possibly fractional) step offset onto the normalized coordinate the
// kernel net was trained with: step 0 -> -1, step N -> +1. N is fixed at
// train time, so test grids built from the same map stay aligned.
inline double normalized_position(double step, int64_t train_max_len) {
  return 2.0 * step / static_cast<double>(train_max_len) - 1.0;
}

struct PositionGrid {
  std::vector<double> positions;  // strictly increasing
  int64_t train_max_len = 0;      // N of the step -> position map
  int64_t stride = 1;             // integer subsample factor of the data
  int64_t sr_ratio = 1;           // test rate / train rate (integer when finer)
};

// Grid for steps {0, stride, 2*stride, ...}/sr_ratio, kernel_len entries.
// At train time the last step must stay inside the trained horizon; at eval
// the map extrapolates past +1 instead.
PositionGrid make_grid(int64_t train_max_len, int64_t kernel_len, int64_t stride, int64_t sr_ratio,
                       bool train_time);

// One weight-normalized affine layer: effective weight = g .* v / ||v||_row.
struct WnLayer {
  Tensor v;  // [out,in] direction
  Tensor g;  // [out] gains
  Tensor b;  // [out]
  int64_t in() const { return v.dim(1); }
  int64_t out() const { return v.dim(0); }
};

// Small MLP from a scalar position to one kernel slice of out_ch*in_ch
// values. depth counts affine layers; the nonlinearity sits between them
// (Sine layers compute sin(omega0 * (Wx + b))).
class KernelNet {
 public:
  KernelNet() = default;
  KernelNet(int out_channels, int in_channels, int hidden, int depth, Nonlinearity nl, double omega0);

  void init_siren(Rng& rng);
  void init_zero_bias(Rng& rng);      // fan-in uniform weights, zero biases
  void init_uniform_knots(Rng& rng);  // fan-in uniform weights, biases placing one knot per unit in [-1,1]

  // positions: [K,1] -> [K, out_channels*in_channels]
  Tensor forward(const Tensor& positions, Tape* tape = nullptr) const;
  // positions as raw values -> kernel [out, in, K]; rejects non-finite output
  Tensor sample(const std::vector<double>& positions, Tape* tape = nullptr) const;
  Tensor sample(const PositionGrid& grid, Tape* tape = nullptr) const;

  std::vector<NamedParam> params(const std::string& prefix);
  int64_t param_count() const;

  uint64_t version() const { return version_; }
  void bump_version() { ++version_; }

  int out_channels() const { return out_ch_; }
  int in_channels() const { return in_ch_; }
  double omega0() const { return omega0_; }
  Nonlinearity nonlinearity() const { return nl_; }
  std::vector<WnLayer>& layers() { return layers_; }
  const std::vector<WnLayer>& layers() const { return layers_; }

 private:
  std::vector<int64_t> widths() const;  // [1, hidden, ..., out*in]
  void fill_fan_in_uniform(Rng& rng);   // shared weight draw for the ReLU-family inits
  Tensor hidden_activation(double position, int upto_layer) const;  // h^(upto-1) column for knot placement

  int out_ch_ = 0, in_ch_ = 0, hidden_ = 0, depth_ = 0;
  Nonlinearity nl_ = Nonlinearity::sine;
  double omega0_ = 0.0;
  std::vector<WnLayer> layers_;
  uint64_t version_ = 0;
};

}  // namespace ckconv

#endif  // CKCONV_CORE_KERNEL_NET_HPP_
