#include "core/fft.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>

#include "core/common.hpp"

namespace ckconv {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Cached unit roots w_k = exp(-2*pi*i*k/n), k < n/2. Each entry comes from its
// own polar() call so no error accumulates across the table.
std::shared_ptr<const std::vector<cplx>> root_table(size_t n) {
  static std::mutex mu;
  static std::map<size_t, std::shared_ptr<const std::vector<cplx>>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto table = std::make_shared<std::vector<cplx>>(n / 2);
  for (size_t k = 0; k < n / 2; ++k) {
    const double ang = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
    (*table)[k] = cplx(std::cos(ang), std::sin(ang));
  }
  cache[n] = table;
  return table;
}

void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  if (n == 1) return;
  auto roots = root_table(n);
  const auto& w = *roots;

  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t stride = n / len;
    for (size_t i = 0; i < n; i += len) {
      for (size_t k = 0; k < len / 2; ++k) {
        cplx tw = w[k * stride];
        if (inverse) tw = std::conj(tw);
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * tw;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& z : a) z *= inv;
  }
}

// Chirps exp(sign*i*pi*k^2/n); k^2 is reduced mod 2n first so the angle stays
// small and full double precision is kept for large k.
std::vector<cplx> chirp(size_t n, double sign) {
  std::vector<cplx> w(n);
  for (size_t k = 0; k < n; ++k) {
    const uint64_t kk = (static_cast<uint64_t>(k) * k) % (2 * n);
    const double ang = sign * kPi * static_cast<double>(kk) / static_cast<double>(n);
    w[k] = cplx(std::cos(ang), std::sin(ang));
  }
  return w;
}

void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  const std::vector<cplx> w = chirp(n, inverse ? 1.0 : -1.0);
  const size_t m = next_pow2(2 * n - 1);

  std::vector<cplx> f(m, cplx(0.0, 0.0));
  std::vector<cplx> g(m, cplx(0.0, 0.0));
  for (size_t k = 0; k < n; ++k) {
    f[k] = a[k] * w[k];
    g[k] = std::conj(w[k]);
    if (k > 0) g[m - k] = std::conj(w[k]);
  }
  fft_pow2(f, false);
  fft_pow2(g, false);
  for (size_t k = 0; k < m; ++k) f[k] *= g[k];
  fft_pow2(f, true);
  for (size_t k = 0; k < n; ++k) a[k] = f[k] * w[k];
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& z : a) z *= inv;
  }
}

}  // namespace

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft(std::vector<cplx>& a, bool inverse) {
  if (a.empty()) fail(ErrorKind::dimension, "fft: empty input");
  if (is_pow2(a.size())) {
    fft_pow2(a, inverse);
  } else {
    fft_bluestein(a, inverse);
  }
}

std::vector<cplx> rfft(const std::vector<double>& x, size_t n_fft) {
  if (n_fft == 0) fail(ErrorKind::dimension, "rfft: n_fft must be >= 1");
  if (n_fft < x.size())
    fail(ErrorKind::dimension, "rfft: n_fft (" + std::to_string(n_fft) + ") shorter than input (" +
                                   std::to_string(x.size()) + ")");
  std::vector<cplx> buf(n_fft, cplx(0.0, 0.0));
  for (size_t i = 0; i < x.size(); ++i) buf[i] = cplx(x[i], 0.0);
  fft(buf, false);
  buf.resize(n_fft / 2 + 1);
  return buf;
}

std::vector<double> irfft(const std::vector<cplx>& spectrum, size_t n_fft) {
  if (n_fft == 0) fail(ErrorKind::dimension, "irfft: n_fft must be >= 1");
  if (spectrum.size() != n_fft / 2 + 1)
    fail(ErrorKind::dimension, "irfft: expected " + std::to_string(n_fft / 2 + 1) + " bins, got " +
                                   std::to_string(spectrum.size()));
  std::vector<cplx> buf(n_fft);
  for (size_t k = 0; k < spectrum.size(); ++k) buf[k] = spectrum[k];
  for (size_t k = spectrum.size(); k < n_fft; ++k) buf[k] = std::conj(buf[n_fft - k]);
  fft(buf, true);
  std::vector<double> out(n_fft);
  for (size_t i = 0; i < n_fft; ++i) out[i] = buf[i].real();
  return out;
}

}  // namespace ckconv
