#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/common.hpp"
#include "core/kernel_net.hpp"
#include "oracles.hpp"

using namespace ckconv;

namespace {

double row_norm(const Tensor& v, int64_t r) {
  double s = 0.0;
  for (int64_t c = 0; c < v.dim(1); ++c) s += v.ptr()[r * v.dim(1) + c] * v.ptr()[r * v.dim(1) + c];
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("position map endpoints") {
  CHECK(normalized_position(0.0, 100) == -1.0);
  CHECK(normalized_position(100.0, 100) == 1.0);
  CHECK(normalized_position(50.0, 100) == 0.0);
  CHECK(normalized_position(150.0, 100) == 2.0);  // eval-time extrapolation
}

TEST_CASE("make_grid frozen examples") {
  // N=4, unit stride: five samples spanning [-1, 1]
  PositionGrid g = make_grid(4, 5, 1, 1, true);
  REQUIRE(g.positions.size() == 5);
  const double want5[] = {-1.0, -0.5, 0.0, 0.5, 1.0};
  for (size_t i = 0; i < 5; ++i) CHECK(g.positions[i] == want5[i]);

  PositionGrid g2 = make_grid(2, 3, 1, 1, true);
  const double want3[] = {-1.0, 0.0, 1.0};
  for (size_t i = 0; i < 3; ++i) CHECK(g2.positions[i] == want3[i]);
}

TEST_CASE("make_grid stride picks every n-th step position bitwise") {
  const PositionGrid fine = make_grid(64, 33, 1, 1, true);
  const PositionGrid coarse = make_grid(64, 17, 2, 1, true);
  for (size_t i = 0; i < coarse.positions.size(); ++i)
    CHECK(coarse.positions[i] == fine.positions[2 * i]);
}

TEST_CASE("make_grid finer rate subdivides steps") {
  const PositionGrid g = make_grid(8, 5, 1, 2, true);
  // steps 0, 1/2, 1, 3/2, 2 -> positions 2*step/8 - 1
  for (size_t i = 0; i < g.positions.size(); ++i)
    CHECK(g.positions[i] == doctest::Approx(2.0 * (0.5 * static_cast<double>(i)) / 8.0 - 1.0).epsilon(1e-15));
}

TEST_CASE("make_grid enforces the trained horizon only at train time") {
  CHECK_THROWS_AS(make_grid(10, 12, 1, 1, true), Error);
  try {
    make_grid(10, 12, 1, 1, true);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::horizon);
    CHECK(e.exit_code() == 2);
  }
  // same geometry is fine at eval: the map extrapolates
  const PositionGrid g = make_grid(10, 12, 1, 1, false);
  CHECK(g.positions.back() > 1.0);

  // stride scales the reach: (K-1)*stride vs N*sr_ratio, boundary inclusive
  CHECK_THROWS_AS(make_grid(10, 7, 2, 1, true), Error);
  CHECK_NOTHROW(make_grid(10, 6, 2, 1, true));  // last step lands exactly on the horizon
  CHECK_NOTHROW(make_grid(10, 6, 1, 1, true));
  // a finer rate shrinks the reach back
  CHECK_NOTHROW(make_grid(10, 7, 2, 2, true));

  CHECK_THROWS_AS(make_grid(0, 5, 1, 1, true), Error);
  CHECK_THROWS_AS(make_grid(10, 0, 1, 1, true), Error);
}

TEST_CASE("nonlinearity parsing") {
  CHECK(nonlinearity_from_string("sine") == Nonlinearity::sine);
  CHECK(nonlinearity_from_string("relu") == Nonlinearity::relu);
  CHECK(nonlinearity_from_string("leaky_relu") == Nonlinearity::leaky_relu);
  CHECK(nonlinearity_from_string("swish") == Nonlinearity::swish);
  CHECK_THROWS_AS(nonlinearity_from_string("gelu"), Error);
  CHECK(piecewise(Nonlinearity::relu));
  CHECK(piecewise(Nonlinearity::leaky_relu));
  CHECK(!piecewise(Nonlinearity::sine));
  CHECK(!piecewise(Nonlinearity::swish));
}

TEST_CASE("kernel net constructor validation") {
  CHECK_THROWS_AS(KernelNet(0, 1, 8, 3, Nonlinearity::sine, 30.0), Error);
  CHECK_THROWS_AS(KernelNet(1, 1, 8, 0, Nonlinearity::sine, 30.0), Error);
  CHECK_THROWS_AS(KernelNet(1, 1, 0, 3, Nonlinearity::sine, 30.0), Error);
  CHECK_THROWS_AS(KernelNet(1, 1, 8, 3, Nonlinearity::sine, 0.0), Error);
  CHECK_NOTHROW(KernelNet(1, 1, 8, 1, Nonlinearity::sine, 30.0));  // depth 1: single affine
}

TEST_CASE("parameter count for the default kernel net geometry") {
  // depth 3, hidden 32: (32 + 32 + 32) + (1024 + 32 + 32) + per-output row of 32+2
  KernelNet net(4, 3, 32, 3, Nonlinearity::sine, 30.0);
  const int64_t out_rows = 4 * 3;
  CHECK(net.param_count() == 96 + 1088 + 34 * out_rows);

  int64_t total = 0;
  Rng rng(1);
  net.init_siren(rng);
  for (auto& p : net.params("k")) total += p.tensor.numel();
  CHECK(total == net.param_count());
}

TEST_CASE("parameter names carry the prefix and layer index") {
  KernelNet net(2, 1, 4, 2, Nonlinearity::sine, 10.0);
  Rng rng(3);
  net.init_siren(rng);
  const auto ps = net.params("block0.conv1.net");
  bool found = false;
  for (const auto& p : ps) found = found || p.name == "block0.conv1.net.l0.v";
  CHECK(found);
  CHECK(ps.size() == 6);  // two layers x {v, g, b}
}

TEST_CASE("siren init obeys the published bounds and bias law") {
  const int hidden = 16;
  const double omega0 = 25.0;
  std::vector<double> bias_unit;  // b * ||row|| / pi over many draws -> uniform on (-1, 1)
  for (uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(seed);
    KernelNet net(2, 2, hidden, 3, Nonlinearity::sine, omega0);
    net.init_siren(rng);
    const auto& ls = net.layers();
    REQUIRE(ls.size() == 3);

    // first layer: U(-1, 1); deeper: U(+-sqrt(6/fan_in)/omega0)
    for (int64_t r = 0; r < ls[0].v.dim(0); ++r)
      for (int64_t c = 0; c < ls[0].v.dim(1); ++c) CHECK(std::abs(ls[0].v.ptr()[r * ls[0].v.dim(1) + c]) <= 1.0);
    for (size_t l = 1; l < ls.size(); ++l) {
      const double bound = std::sqrt(6.0 / static_cast<double>(ls[l].in())) / omega0;
      for (int64_t i = 0; i < ls[l].v.numel(); ++i) CHECK(std::abs(ls[l].v.ptr()[i]) <= bound);
    }

    // gains equal row norms: effective matrix == draw
    for (size_t l = 0; l < ls.size(); ++l)
      for (int64_t r = 0; r < ls[l].out(); ++r)
        CHECK(ls[l].g.ptr()[r] == doctest::Approx(row_norm(ls[l].v, r)).epsilon(1e-12));

    // sine-layer biases span one period: |b| <= pi / ||row||. The final
    // affine layer has nothing to wrap into, so its bias stays as small as
    // its weights instead of exploding to pi over a tiny row norm.
    for (size_t l = 0; l < ls.size(); ++l)
      for (int64_t r = 0; r < ls[l].out(); ++r) {
        const double scaled = ls[l].b.ptr()[r] * row_norm(ls[l].v, r);
        CHECK(std::abs(scaled) <= M_PI);
        if (l + 1 < ls.size()) {
          bias_unit.push_back((scaled / M_PI + 1.0) / 2.0);
        } else {
          const double wbound = std::sqrt(6.0 / static_cast<double>(ls[l].in())) / omega0;
          CHECK(std::abs(ls[l].b.ptr()[r]) <= wbound);
        }
      }
  }
  CHECK(oracle::ks_uniform_pvalue(bias_unit) > 0.01);
}

TEST_CASE("forward and sample agree on the layout mapping") {
  Rng rng(17);
  KernelNet net(3, 2, 8, 3, Nonlinearity::sine, 30.0);
  net.init_siren(rng);

  const std::vector<double> pos{-1.0, -0.25, 0.3, 1.0};
  Tensor pos_col = Tensor::from({4, 1}, pos);
  Tensor flat = net.forward(pos_col);    // [K, out*in]
  Tensor kern = net.sample(pos);         // [out, in, K]
  REQUIRE(flat.shape == Shape{4, 6});
  REQUIRE(kern.shape == Shape{3, 2, 4});
  for (int64_t o = 0; o < 3; ++o)
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t k = 0; k < 4; ++k)
        CHECK(kern.ptr()[(o * 2 + i) * 4 + k] == flat.ptr()[k * 6 + (o * 2 + i)]);
}

TEST_CASE("sample output is bounded for sine nets and finite everywhere") {
  Rng rng(23);
  KernelNet net(1, 1, 16, 3, Nonlinearity::sine, 30.0);
  net.init_siren(rng);
  PositionGrid g = make_grid(128, 129, 1, 1, true);
  Tensor k = net.sample(g);
  for (int64_t i = 0; i < k.numel(); ++i) CHECK(std::isfinite(k.ptr()[i]));
}

TEST_CASE("sample rejects non-finite kernel values") {
  Rng rng(29);
  KernelNet net(1, 1, 4, 2, Nonlinearity::relu, 1.0);
  net.init_zero_bias(rng);
  net.layers()[1].g.ptr()[0] = 1e308;
  net.layers()[0].g.ptr()[0] = 1e308;  // relu(1e308 * x) * 1e308 overflows
  bool threw = false;
  try {
    net.sample(std::vector<double>{1.0});
  } catch (const Error& e) {
    threw = true;
    CHECK(e.kind() == ErrorKind::divergence);
  }
  CHECK(threw);
}

TEST_CASE("zero-bias init: fan-in uniform weights, biases zero, gains match rows") {
  Rng rng(31);
  KernelNet net(2, 1, 8, 3, Nonlinearity::relu, 1.0);
  net.init_zero_bias(rng);
  const auto& ls = net.layers();
  for (size_t l = 0; l < ls.size(); ++l) {
    const double bound = std::sqrt(1.0 / static_cast<double>(ls[l].in()));
    for (int64_t i = 0; i < ls[l].v.numel(); ++i) CHECK(std::abs(ls[l].v.ptr()[i]) <= bound);
    for (int64_t r = 0; r < ls[l].out(); ++r) {
      CHECK(ls[l].b.ptr()[r] == 0.0);
      CHECK(ls[l].g.ptr()[r] == doctest::Approx(row_norm(ls[l].v, r)).epsilon(1e-12));
    }
  }
}

TEST_CASE("uniform-knot init places one kink per hidden unit at its knot") {
  Rng rng(37);
  const int hidden = 9;
  KernelNet net(1, 1, hidden, 3, Nonlinearity::relu, 1.0);
  net.init_uniform_knots(rng);

  // Knots are equispaced in [-1, 1]. A unit's pre-activation must vanish at
  // its own knot; verify via the first layer where h(x) = x directly.
  const auto& l0 = net.layers()[0];
  for (int64_t r = 0; r < hidden; ++r) {
    const double knot = -1.0 + 2.0 * static_cast<double>(r) / static_cast<double>(hidden - 1);
    const double w = l0.g.ptr()[r] * l0.v.ptr()[r] / std::abs(l0.v.ptr()[r]);
    const double pre = w * knot + l0.b.ptr()[r];
    CHECK(std::abs(pre) < 1e-12);
  }
}

TEST_CASE("uniform-knot init with a single unit centers the knot") {
  Rng rng(41);
  KernelNet net(1, 1, 1, 2, Nonlinearity::relu, 1.0);
  net.init_uniform_knots(rng);
  const auto& l0 = net.layers()[0];
  // width 1 -> knot at 0 -> bias = -w * 0 = 0
  CHECK(l0.b.ptr()[0] == 0.0);
}

TEST_CASE("uniform-knot init rejects smooth nonlinearities") {
  Rng rng(43);
  KernelNet net(1, 1, 4, 2, Nonlinearity::sine, 30.0);
  CHECK_THROWS_AS(net.init_uniform_knots(rng), Error);
  KernelNet net2(1, 1, 4, 2, Nonlinearity::swish, 1.0);
  CHECK_THROWS_AS(net2.init_uniform_knots(rng), Error);
}

TEST_CASE("reinitialization bumps the version") {
  Rng rng(47);
  KernelNet net(1, 1, 4, 2, Nonlinearity::sine, 30.0);
  const uint64_t v0 = net.version();
  net.init_siren(rng);
  CHECK(net.version() > v0);
  net.bump_version();
  CHECK(net.version() > v0 + 1);
}
