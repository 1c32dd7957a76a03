#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "core/adam.hpp"
#include "core/common.hpp"
#include "core/tensor.hpp"
#include "oracles.hpp"

using namespace ckconv;

namespace {

Tensor rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = true) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(shape, v, requires_grad);
}

// Shifts values away from 0 so kinked nonlinearities are differentiable at
// every probe point.
Tensor rand_tensor_away_from_zero(const Shape& shape, Rng& rng) {
  Tensor t = rand_tensor(shape, rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    double& v = t.ptr()[i];
    v += (v >= 0.0 ? 0.05 : -0.05);
  }
  return t;
}

// Compares tape gradients of a scalar-valued forward against central
// differences for every listed leaf.
void gradcheck(const std::function<Tensor(Tape*)>& fwd, const std::vector<Tensor>& leaves,
               double tol = 2e-5) {
  Tape tape;
  Tensor loss = fwd(&tape);
  for (Tensor leaf : leaves) {
    leaf.ensure_grad();
    leaf.zero_grad();
  }
  tape.backward(loss);
  auto eval = [&fwd]() {
    Tape scratch;
    return fwd(&scratch).scalar();
  };
  for (Tensor leaf : leaves) {
    const auto fd = oracle::finite_diff(eval, leaf.ptr(), static_cast<size_t>(leaf.numel()));
    const double err = oracle::grad_rel_err(fd, leaf.gptr(), static_cast<size_t>(leaf.numel()));
    CHECK_MESSAGE(err < tol, "gradient mismatch ", err);
  }
}

}  // namespace

TEST_CASE("gradients: elementwise ops with and without broadcasting") {
  Rng rng(101);
  Tensor a = rand_tensor({6}, rng);
  Tensor b = rand_tensor({6}, rng);
  Tensor s = rand_tensor({1}, rng);

  gradcheck([&](Tape* t) { return sum(add(a, b, t), t); }, {a, b});
  gradcheck([&](Tape* t) { return sum(sub(a, b, t), t); }, {a, b});
  gradcheck([&](Tape* t) { return sum(mul(a, b, t), t); }, {a, b});
  gradcheck([&](Tape* t) { return sum(mul(a, s, t), t); }, {a, s});
  gradcheck([&](Tape* t) { return sum(add(s, a, t), t); }, {a, s});
  gradcheck([&](Tape* t) { return sum(scale(a, -1.7, t), t); }, {a});
}

TEST_CASE("gradients: nonlinearities") {
  Rng rng(102);
  Tensor x = rand_tensor_away_from_zero({8}, rng);
  Tensor w = rand_tensor({8}, rng);  // weighting makes the reduction non-trivial

  gradcheck([&](Tape* t) { return sum(mul(w, sine(x, t), t), t); }, {x});
  gradcheck([&](Tape* t) { return sum(mul(w, relu(x, t), t), t); }, {x});
  gradcheck([&](Tape* t) { return sum(mul(w, leaky_relu(x, 0.01, t), t), t); }, {x});
  gradcheck([&](Tape* t) { return sum(mul(w, swish(x, t), t), t); }, {x});
}

TEST_CASE("gradients: dropout applies one fixed mask") {
  Rng rng(103);
  Tensor x = rand_tensor({32}, rng);
  gradcheck(
      [&](Tape* t) {
        Rng mask_rng(555);  // same mask on every re-evaluation
        return sum(dropout(x, 0.4, true, mask_rng, t), t);
      },
      {x});
}

TEST_CASE("gradients: matmul, linear, channel_linear") {
  Rng rng(104);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({4, 2}, rng);
  Tensor r = rand_tensor({3, 2}, rng, -1.0, 1.0, false);
  gradcheck([&](Tape* t) { return mse_loss(matmul(a, b, t), r, t); }, {a, b});

  Tensor x = rand_tensor({5, 3}, rng);
  Tensor w = rand_tensor({2, 3}, rng);
  Tensor bias = rand_tensor({2}, rng);
  Tensor target = rand_tensor({5, 2}, rng, -1.0, 1.0, false);
  gradcheck([&](Tape* t) { return mse_loss(linear(x, w, bias, t), target, t); }, {x, w, bias});

  Tensor xc = rand_tensor({2, 3, 4}, rng);
  Tensor wc = rand_tensor({2, 3}, rng);
  Tensor bc = rand_tensor({2}, rng);
  Tensor tc = rand_tensor({2, 2, 4}, rng, -1.0, 1.0, false);
  gradcheck([&](Tape* t) { return mse_loss(channel_linear(xc, wc, bc, t), tc, t); }, {xc, wc, bc});
}

TEST_CASE("gradients: weight_norm and layer_norm") {
  Rng rng(105);
  Tensor v = rand_tensor_away_from_zero({3, 4}, rng);
  Tensor g = rand_tensor({3}, rng, 0.5, 2.0);
  Tensor probe = rand_tensor({3, 4}, rng, -1.0, 1.0, false);
  gradcheck([&](Tape* t) { return mse_loss(weight_norm(v, g, t), probe, t); }, {v, g});

  Tensor x = rand_tensor({2, 4, 3}, rng, -2.0, 2.0);
  Tensor gain = rand_tensor({4}, rng, 0.5, 1.5);
  Tensor bias = rand_tensor({4}, rng);
  Tensor target = rand_tensor({2, 4, 3}, rng, -1.0, 1.0, false);
  gradcheck([&](Tape* t) { return mse_loss(layer_norm(x, gain, bias, t), target, t); }, {x, gain, bias},
            5e-5);
}

TEST_CASE("gradients: last_step, mean, mse, cross_entropy") {
  Rng rng(106);
  Tensor x = rand_tensor({2, 3, 4}, rng);
  Tensor tgt = rand_tensor({2, 3}, rng, -1.0, 1.0, false);
  gradcheck([&](Tape* t) { return mse_loss(last_step(x, t), tgt, t); }, {x});
  gradcheck([&](Tape* t) { return mean(x, t); }, {x});

  Tensor logits = rand_tensor({4, 5}, rng, -2.0, 2.0);
  std::vector<int64_t> cls{0, 4, 2, 2};
  gradcheck([&](Tape* t) { return cross_entropy_loss(logits, cls, t); }, {logits});

  Tensor seq_logits = rand_tensor({2, 3, 4}, rng, -2.0, 2.0);
  std::vector<int64_t> seq_cls{0, 1, 2, 2, 1, 0, 1, 1};
  gradcheck([&](Tape* t) { return cross_entropy_loss(seq_logits, seq_cls, t); }, {seq_logits});
}

TEST_CASE("gradients: composite pipeline") {
  Rng rng(107);
  Tensor x = rand_tensor({2, 3, 5}, rng);
  Tensor gain = rand_tensor({3}, rng, 0.8, 1.2);
  Tensor bias = rand_tensor({3}, rng);
  Tensor w = rand_tensor({2, 3}, rng);
  Tensor wb = rand_tensor({2}, rng);
  Tensor target = rand_tensor({2, 2, 5}, rng, -1.0, 1.0, false);
  gradcheck(
      [&](Tape* t) {
        Tensor h = layer_norm(x, gain, bias, t);
        h = swish(h, t);
        h = channel_linear(h, w, wb, t);
        return mse_loss(h, target, t);
      },
      {x, gain, bias, w, wb}, 5e-5);
}

TEST_CASE("two backward passes double leaf gradients exactly") {
  Rng rng(108);
  Tensor x = rand_tensor({5}, rng);
  Tape tape;
  Tensor y = sum(mul(x, x, &tape), &tape);
  x.ensure_grad();
  x.zero_grad();
  tape.backward(y);
  std::vector<double> once(x.gptr(), x.gptr() + x.numel());
  tape.backward(y);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(x.gptr()[i] == 2.0 * once[static_cast<size_t>(i)]);  // exact, intermediates reset per pass
}

TEST_CASE("backward rejects non-scalar, detached, and non-terminal losses") {
  Rng rng(109);
  Tensor x = rand_tensor({4}, rng);

  Tape tape;
  Tensor vec = mul(x, x, &tape);
  CHECK_THROWS_AS(tape.backward(vec), Error);  // not a scalar

  Tensor plain = Tensor::from({1}, {3.0});
  CHECK_THROWS_AS(tape.backward(plain), Error);  // never recorded

  Tensor s1 = sum(vec, &tape);
  Tensor s2 = sum(x, &tape);  // recorded after s1 -> s1 is no longer terminal
  CHECK_THROWS_AS(tape.backward(s1), Error);
  tape.backward(s2);  // terminal works

  try {
    tape.backward(s1);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::contract);
  }
}

TEST_CASE("ops without a tape never build graph state") {
  Rng rng(110);
  Tensor x = rand_tensor({4}, rng);
  Tape tape;
  Tensor y = mul(x, x, nullptr);
  CHECK(tape.size() == 0);
  CHECK(!y.requires_grad);
}

TEST_CASE("tape clear resets recorded nodes") {
  Rng rng(111);
  Tensor x = rand_tensor({4}, rng);
  Tape tape;
  Tensor y = sum(x, &tape);
  CHECK(tape.size() == 1);
  tape.clear();
  CHECK(tape.size() == 0);
  CHECK_THROWS_AS(tape.backward(y), Error);
}

TEST_CASE("adam first step moves a fresh parameter by about minus lr") {
  Tensor p = Tensor::from({1}, {3.0}, true);
  p.ensure_grad();
  p.gptr()[0] = 1.0;
  std::vector<NamedParam> params{{"p", p}};
  AdamState state;
  adam_step(params, state, 0.1);
  CHECK(p.ptr()[0] == doctest::Approx(2.9).epsilon(1e-8));
  CHECK(state.t == 1);

  // same gradient again: bias-corrected ratio stays 1, another ~0.1 step
  p.gptr()[0] = 1.0;
  adam_step(params, state, 0.1);
  CHECK(p.ptr()[0] == doctest::Approx(2.8).epsilon(1e-7));
}

TEST_CASE("adam flags non-finite gradients with the parameter name") {
  Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
  p.ensure_grad();
  p.gptr()[0] = std::nan("");
  std::vector<NamedParam> params{{"block0.conv1.bias", p}};
  AdamState state;
  CHECK_THROWS_AS(adam_step(params, state, 0.01), Error);
  try {
    adam_step(params, state, 0.01);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
    CHECK(std::string(e.what()).find("block0.conv1.bias") != std::string::npos);
  }
}

TEST_CASE("adam rejects a changed parameter list") {
  Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
  p.ensure_grad();
  std::vector<NamedParam> params{{"p", p}};
  AdamState state;
  adam_step(params, state, 0.01);
  Tensor q = Tensor::from({1}, {0.0}, true);
  q.ensure_grad();
  params.push_back({"q", q});
  CHECK_THROWS_AS(adam_step(params, state, 0.01), Error);
}

TEST_CASE("rng uniform passes a KS uniformity check") {
  Rng rng(2024);
  std::vector<double> samples(10000);
  for (double& s : samples) s = rng.uniform();
  CHECK(oracle::ks_uniform_pvalue(samples) > 0.01);
}
