#ifndef CKCONV_CORE_CONV_HPP_
#define CKCONV_CORE_CONV_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/kernel_net.hpp"
#include "core/tensor.hpp"

namespace ckconv {

// y[b,o,t] = bias[o] + sum_c sum_{tau=0..min(t,K-1)} k[o,c,tau] * x[b,c,t-tau]
// x:[B,C,T], k:[O,C,K], bias:[O]. K > T is allowed (tail taps never touched).
Tensor causal_conv_direct(const Tensor& x, const Tensor& k, const Tensor& bias, Tape* tape = nullptr);

// Same contract via the convolution theorem, padded to the next power of two
// >= 2T-1 so the circular product contains the full causal segment.
Tensor causal_conv_fft(const Tensor& x, const Tensor& k, const Tensor& bias, Tape* tape = nullptr);

// Gaussian low-pass taps at integer offsets -ratio..ratio (mean 0, sigma 0.5),
// normalized to unit sum. Applied to sampled kernels before evaluating on a
// grid finer than the training grid.
std::vector<double> blur_taps(int64_t ratio);
// Same-length zero-padded convolution of each kernel row with the taps.
Tensor blur_kernel(const Tensor& k, const std::vector<double>& taps, Tape* tape = nullptr);

// Runtime resampling of the evaluation grid relative to the training grid.
// stride n: data subsampled by n (coarser); sr_ratio r: data r times finer.
struct Resample {
  int64_t stride = 1;
  int64_t sr_ratio = 1;
};

// Continuous-kernel convolution layer: a KernelNet renders the kernel on the
// requested grid, then the causal convolution runs over it. The horizon is
// global by default (kernel spans the whole input); a fixed horizon caps it.
class CkconvLayer {
 public:
  CkconvLayer() = default;
  CkconvLayer(int out_ch, int in_ch, int64_t train_max_len, int64_t horizon, int kernel_hidden,
              int kernel_depth, Nonlinearity nl, double omega0);

  // Kernel for a length-T input under rs; cached per (grid, parameter
  // version) when not recording. Applies blur + rate normalization.
  Tensor sampled_kernel(int64_t T, const Resample& rs, bool train_time, Tape* tape = nullptr) const;

  Tensor forward(const Tensor& x, const Resample& rs, bool train_time, Tape* tape = nullptr) const;

  std::vector<NamedParam> params(const std::string& prefix);
  void invalidate_cache() const;

  KernelNet net;
  Tensor bias;
  int64_t train_max_len = 0;
  int64_t horizon = 0;  // 0 = global

 private:
  struct CacheKey {
    int64_t kernel_len = -1, stride = -1, sr_ratio = -1;
    uint64_t version = 0;
    bool operator==(const CacheKey&) const = default;
  };
  mutable CacheKey cache_key_;
  mutable std::optional<Tensor> cache_val_;
};

// Inverse-density weights for strictly increasing sample positions: half the
// sum of the two adjacent gaps, a single gap at either edge, 1 for a lone
// sample. A unit-step grid yields exactly 1 everywhere; a uniform grid with
// gap g yields exactly g.
std::vector<double> gap_density(const std::vector<double>& positions);

// Weighted causal sum at arbitrary observed positions (unitary-step units):
//   y[b,o,j] = bias[o] + sum_c sum_{i: p_i <= p_j} s_i * x[b,c,i] * psi[o,c](p_j - p_i)
// The inner sum runs channels-outer / positions-descending, which makes the
// fully observed unit-grid case with s == 1 bit-identical to
// causal_conv_direct. Evaluation path only (no tape).
Tensor irregular_conv(const CkconvLayer& layer, const Tensor& values,
                      const std::vector<std::vector<double>>& positions,
                      const std::vector<std::vector<double>>& density,
                      const std::vector<int64_t>& out_indices = {});

// Spectral radius estimate of a square matrix (Gelfand formula via repeated
// squaring); used to scale recurrence matrices into the stable regime.
double spectral_radius_est(const Tensor& W);

// psi[tau] = W^tau U as a [H, Cin, T] kernel: the convolution this kernel
// induces reproduces a linear recurrence h(t) = W h(t-1) + U x(t).
Tensor linear_rnn_kernel(const Tensor& W, const Tensor& U, int64_t T);
// Unrolled recurrence with h(-1) = 0; x:[B,Cin,T] -> [B,H,T].
Tensor linear_rnn_unroll(const Tensor& W, const Tensor& U, const Tensor& x);

}  // namespace ckconv

#endif  // CKCONV_CORE_CONV_HPP_
