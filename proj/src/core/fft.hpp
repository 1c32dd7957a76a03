#ifndef CKCONV_CORE_FFT_HPP_
#define CKCONV_CORE_FFT_HPP_

#include <complex>
#include <cstddef>
#include <vector>

namespace ckconv {

using cplx = std::complex<double>;

// In-place DFT; the inverse applies the 1/n factor. Any n >= 1 works:
// power-of-two sizes run the iterative radix-2 kernel, everything else goes
// through Bluestein's chirp-z reduction onto a power-of-two convolution.
void fft(std::vector<cplx>& a, bool inverse);

// Real FFT of x zero-padded to n_fft samples; returns the n_fft/2 + 1
// nonredundant bins. n_fft must be >= x.size().
std::vector<cplx> rfft(const std::vector<double>& x, size_t n_fft);

// Inverse of rfft: expects n_fft/2 + 1 bins, returns n_fft real samples.
std::vector<double> irfft(const std::vector<cplx>& spectrum, size_t n_fft);

size_t next_pow2(size_t n);

}  // namespace ckconv

#endif  // CKCONV_CORE_FFT_HPP_
