#include <doctest.h>

#include <complex>
#include <vector>

#include "core/common.hpp"
#include "core/fft.hpp"
#include "oracles.hpp"

using namespace ckconv;

namespace {

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<cplx>& a, const std::vector<cplx>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("next_pow2 rounds up to powers of two") {
  CHECK(next_pow2(1) == 1);
  CHECK(next_pow2(2) == 2);
  CHECK(next_pow2(3) == 4);
  CHECK(next_pow2(17) == 32);
  CHECK(next_pow2(1000) == 1024);
  CHECK(next_pow2(1024) == 1024);
}

TEST_CASE("fft matches the quadratic DFT on power-of-two and odd sizes") {
  Rng rng(11);
  for (size_t n : {1u, 2u, 4u, 5u, 8u, 12u, 16u, 17u, 31u, 64u, 100u, 127u}) {
    std::vector<cplx> x(n);
    for (auto& v : x) v = cplx(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    std::vector<cplx> lib = x;
    fft(lib, false);
    const auto ref = oracle::dft(x, false);
    CHECK_MESSAGE(max_abs_diff(lib, ref) < 1e-9 * static_cast<double>(n), "forward n=", n);

    std::vector<cplx> inv = lib;
    fft(inv, true);
    CHECK_MESSAGE(max_abs_diff(inv, x) < 1e-10 * static_cast<double>(n), "roundtrip n=", n);
  }
}

TEST_CASE("fft of a unit impulse is flat") {
  std::vector<cplx> x(16, cplx(0.0, 0.0));
  x[0] = cplx(1.0, 0.0);
  fft(x, false);
  for (const auto& v : x) {
    CHECK(v.real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(v.imag()) < 1e-12);
  }
}

TEST_CASE("rfft agrees with the DFT low bins and irfft round-trips") {
  Rng rng(22);
  for (size_t n : {1u, 2u, 3u, 5u, 8u, 17u, 32u, 100u, 128u, 243u, 1000u}) {
    const size_t n_fft = next_pow2(2 * n);
    const std::vector<double> x = random_vec(n, rng);

    const auto spec = rfft(x, n_fft);
    REQUIRE(spec.size() == n_fft / 2 + 1);

    std::vector<cplx> padded(n_fft, cplx(0.0, 0.0));
    for (size_t i = 0; i < n; ++i) padded[i] = cplx(x[i], 0.0);
    const auto ref = oracle::dft(padded, false);
    double worst = 0.0;
    for (size_t f = 0; f < spec.size(); ++f) worst = std::max(worst, std::abs(spec[f] - ref[f]));
    CHECK_MESSAGE(worst < 1e-9 * static_cast<double>(n_fft), "rfft n=", n);

    const auto back = irfft(spec, n_fft);
    REQUIRE(back.size() == n_fft);
    double rt = 0.0;
    for (size_t i = 0; i < n; ++i) rt = std::max(rt, std::abs(back[i] - x[i]));
    for (size_t i = n; i < n_fft; ++i) rt = std::max(rt, std::abs(back[i]));
    CHECK_MESSAGE(rt < 1e-12 * static_cast<double>(n_fft), "irfft n=", n);
  }
}

TEST_CASE("rfft padding length shorter than the input is rejected") {
  std::vector<double> x(8, 1.0);
  CHECK_THROWS_AS(rfft(x, 4), Error);
  CHECK_THROWS_AS(rfft(x, 0), Error);
  try {
    rfft(x, 4);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
  }
}

TEST_CASE("irfft rejects a spectrum with the wrong bin count") {
  std::vector<cplx> spec(5, cplx(0.0, 0.0));
  CHECK_THROWS_AS(irfft(spec, 16), Error);  // 16 needs 9 bins
  try {
    irfft(spec, 16);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::dimension);
  }
}

TEST_CASE("linear convolution via rfft matches the definition on a prime length") {
  Rng rng(33);
  const size_t n = 13, m = 7;
  const std::vector<double> a = random_vec(n, rng);
  const std::vector<double> b = random_vec(m, rng);
  std::vector<double> ref(n + m - 1, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) ref[i + j] += a[i] * b[j];

  const size_t n_fft = next_pow2(n + m - 1);
  auto fa = rfft(a, n_fft);
  const auto fb = rfft(b, n_fft);
  for (size_t f = 0; f < fa.size(); ++f) fa[f] *= fb[f];
  const auto conv = irfft(fa, n_fft);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(conv[i] == doctest::Approx(ref[i]).epsilon(1e-10));
}
