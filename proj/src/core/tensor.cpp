#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ckconv {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 1) fail(ErrorKind::dimension, "tensor extents must be >= 1, got " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_numel(shape)), 0.0);
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  return t;
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) fail(ErrorKind::data, "tensor values must be finite");
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    fail(ErrorKind::dimension, "tensor init: " + std::to_string(values.size()) + " values for shape " +
                                   shape_str(shape));
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorKind::data, "tensor values must be finite");
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.ensure_grad();
  return t;
}

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

double Tensor::scalar() const {
  if (numel() != 1) fail(ErrorKind::contract, "scalar() on tensor of shape " + shape_str(shape));
  return (*data)[0];
}

bool all_finite(const Tensor& t) {
  for (double v : *t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tape::record(const Tensor& out, std::function<void()> fn) {
  nodes_.push_back(std::move(fn));
  outputs_.push_back(out);
  terminal_ = out.data.get();
}

void Tape::clear() {
  nodes_.clear();
  outputs_.clear();
  terminal_ = nullptr;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    fail(ErrorKind::contract, "backward: loss must be scalar, got shape " + shape_str(loss.shape));
  if (nodes_.empty() || !loss.requires_grad || !loss.grad)
    fail(ErrorKind::contract, "backward: loss is not attached to this tape");
  if (loss.data.get() != terminal_)
    fail(ErrorKind::contract, "backward: loss is not the tape's terminal node");
  // Gradients of recorded intermediates are per-pass scratch; only leaves
  // (never an op output) accumulate across passes.
  for (auto& out : outputs_) out.zero_grad();
  (*loss.grad)[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

namespace {

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad) return true;
  return false;
}

Tensor make_out(const Shape& shape) { return Tensor::zeros(shape); }

void attach(Tensor& out, Tape* tape) {
  out.requires_grad = true;
  out.ensure_grad();
  (void)tape;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    fail(ErrorKind::dimension,
         std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

// Shared elementwise binary kernel with single-element broadcast.
template <class F, class DFa, class DFb>
Tensor binary_ew(const char* name, const Tensor& a, const Tensor& b, Tape* tape, F f, DFa dfa, DFb dfb) {
  if (!a.defined() || !b.defined()) fail(ErrorKind::contract, std::string(name) + ": undefined operand");
  const bool a_one = a.numel() == 1;
  const bool b_one = b.numel() == 1;
  if (!(a.shape == b.shape || a_one || b_one))
    fail(ErrorKind::dimension,
         std::string(name) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const Shape& out_shape = (a_one && !b_one) ? b.shape : a.shape;
  Tensor out = make_out(out_shape);
  const int64_t n = out.numel();
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[a_one ? 0 : i], pb[b_one ? 0 : i]);

  if (wants_grad(tape, {&a, &b})) {
    attach(out, tape);
    Tensor ac = a, bc = b, oc = out;
    if (ac.requires_grad) ac.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [ac, bc, oc, a_one, b_one, n, dfa, dfb]() {
      const double* gy = oc.gptr();
      const double* pa2 = ac.ptr();
      const double* pb2 = bc.ptr();
      for (int64_t i = 0; i < n; ++i) {
        const double x = pa2[a_one ? 0 : i];
        const double y = pb2[b_one ? 0 : i];
        if (ac.requires_grad) (*ac.grad)[a_one ? 0 : static_cast<size_t>(i)] += dfa(x, y) * gy[i];
        if (bc.requires_grad) (*bc.grad)[b_one ? 0 : static_cast<size_t>(i)] += dfb(x, y) * gy[i];
      }
    });
  }
  return out;
}

template <class F, class DF>
Tensor unary_ew(const char* name, const Tensor& a, Tape* tape, F f, DF df) {
  if (!a.defined()) fail(ErrorKind::contract, std::string(name) + ": undefined operand");
  Tensor out = make_out(a.shape);
  const int64_t n = out.numel();
  const double* pa = a.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);

  if (wants_grad(tape, {&a})) {
    attach(out, tape);
    Tensor ac = a, oc = out;
    ac.ensure_grad();
    tape->record(out, [ac, oc, n, df]() {
      const double* gy = oc.gptr();
      const double* pa2 = ac.ptr();
      double* ga = ac.gptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += df(pa2[i]) * gy[i];
    });
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_ew(
      "add", a, b, tape, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_ew(
      "sub", a, b, tape, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return binary_ew(
      "mul", a, b, tape, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
  return unary_ew(
      "scale", a, tape, [s](double x) { return s * x; }, [s](double) { return s; });
}

Tensor sine(const Tensor& a, Tape* tape) {
  return unary_ew(
      "sine", a, tape, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Tensor relu(const Tensor& a, Tape* tape) {
  return unary_ew(
      "relu", a, tape, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope, Tape* tape) {
  return unary_ew(
      "leaky_relu", a, tape, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Tensor swish(const Tensor& a, Tape* tape) {
  return unary_ew(
      "swish", a, tape, [](double x) { return x * sigmoid(x); },
      [](double x) {
        const double s = sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor dropout(const Tensor& a, double p, bool training, Rng& rng, Tape* tape) {
  if (p < 0.0 || p >= 1.0) fail(ErrorKind::config, "dropout: p must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return a;  // identity, graph passes through untouched
  const int64_t n = a.numel();
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
  const double keep_scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < n; ++i) (*mask)[i] = rng.uniform() >= p ? keep_scale : 0.0;

  Tensor out = make_out(a.shape);
  const double* pa = a.ptr();
  double* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * (*mask)[i];

  if (wants_grad(tape, {&a})) {
    attach(out, tape);
    Tensor ac = a, oc = out;
    ac.ensure_grad();
    tape->record(out, [ac, oc, mask, n]() {
      const double* gy = oc.gptr();
      double* ga = ac.gptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += (*mask)[i] * gy[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 2 || b.rank() != 2)
    fail(ErrorKind::dimension, "matmul: expects rank-2 operands, got " + shape_str(a.shape) + " and " +
                                   shape_str(b.shape));
  const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    fail(ErrorKind::dimension, "matmul: inner dimensions differ, " + shape_str(a.shape) + " vs " +
                                   shape_str(b.shape));
  Tensor out = make_out({m, n});
  {
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t l = 0; l < k; ++l) {
        const double av = pa[i * k + l];
        for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[l * n + j];
      }
  }
  if (wants_grad(tape, {&a, &b})) {
    attach(out, tape);
    Tensor ac = a, bc = b, oc = out;
    if (ac.requires_grad) ac.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [ac, bc, oc, m, n, k]() {
      const double* gy = oc.gptr();
      if (ac.requires_grad) {
        double* ga = ac.gptr();
        const double* pb = bc.ptr();
        // ga[i,l] += sum_j gy[i,j] * b[l,j]
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const double g = gy[i * n + j];
            for (int64_t l = 0; l < k; ++l) ga[i * k + l] += g * pb[l * n + j];
          }
      }
      if (bc.requires_grad) {
        double* gb = bc.gptr();
        const double* pa = ac.ptr();
        // gb[l,j] += sum_i a[i,l] * gy[i,j]
        for (int64_t i = 0; i < m; ++i)
          for (int64_t l = 0; l < k; ++l) {
            const double av = pa[i * k + l];
            for (int64_t j = 0; j < n; ++j) gb[l * n + j] += av * gy[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
    fail(ErrorKind::dimension, "linear: expects x:[N,in], w:[out,in], b:[out]");
  const int64_t N = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out_dim)
    fail(ErrorKind::dimension, "linear: shape mismatch x" + shape_str(x.shape) + " w" + shape_str(w.shape) +
                                   " b" + shape_str(b.shape));
  Tensor out = make_out({N, out_dim});
  {
    const double* px = x.ptr();
    const double* pw = w.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    for (int64_t r = 0; r < N; ++r)
      for (int64_t o = 0; o < out_dim; ++o) {
        double acc = pb[o];
        for (int64_t i = 0; i < in; ++i) acc += px[r * in + i] * pw[o * in + i];
        po[r * out_dim + o] = acc;
      }
  }
  if (wants_grad(tape, {&x, &w, &b})) {
    attach(out, tape);
    Tensor xc = x, wc = w, bc = b, oc = out;
    if (xc.requires_grad) xc.ensure_grad();
    if (wc.requires_grad) wc.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [xc, wc, bc, oc, N, in, out_dim]() {
      const double* gy = oc.gptr();
      const double* px = xc.ptr();
      const double* pw = wc.ptr();
      for (int64_t r = 0; r < N; ++r)
        for (int64_t o = 0; o < out_dim; ++o) {
          const double g = gy[r * out_dim + o];
          if (g == 0.0) continue;
          if (xc.requires_grad) {
            double* gx = xc.gptr();
            for (int64_t i = 0; i < in; ++i) gx[r * in + i] += g * pw[o * in + i];
          }
          if (wc.requires_grad) {
            double* gw = wc.gptr();
            for (int64_t i = 0; i < in; ++i) gw[o * in + i] += g * px[r * in + i];
          }
          if (bc.requires_grad) (*bc.grad)[static_cast<size_t>(o)] += g;
        }
    });
  }
  return out;
}

Tensor channel_linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  if (x.rank() != 3 || w.rank() != 2 || b.rank() != 1)
    fail(ErrorKind::dimension, "channel_linear: expects x:[B,C,T], w:[O,C], b:[O]");
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = w.dim(0);
  if (w.dim(1) != C || b.dim(0) != O)
    fail(ErrorKind::dimension, "channel_linear: shape mismatch x" + shape_str(x.shape) + " w" +
                                   shape_str(w.shape) + " b" + shape_str(b.shape));
  Tensor out = make_out({B, O, T});
  {
    const double* px = x.ptr();
    const double* pw = w.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    for (int64_t bi = 0; bi < B; ++bi)
      for (int64_t o = 0; o < O; ++o) {
        double* row = po + (bi * O + o) * T;
        for (int64_t t = 0; t < T; ++t) row[t] = pb[o];
        for (int64_t c = 0; c < C; ++c) {
          const double wv = pw[o * C + c];
          const double* xin = px + (bi * C + c) * T;
          for (int64_t t = 0; t < T; ++t) row[t] += wv * xin[t];
        }
      }
  }
  if (wants_grad(tape, {&x, &w, &b})) {
    attach(out, tape);
    Tensor xc = x, wc = w, bc = b, oc = out;
    if (xc.requires_grad) xc.ensure_grad();
    if (wc.requires_grad) wc.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [xc, wc, bc, oc, B, C, T, O]() {
      const double* gy = oc.gptr();
      const double* px = xc.ptr();
      const double* pw = wc.ptr();
      for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t o = 0; o < O; ++o) {
          const double* grow = gy + (bi * O + o) * T;
          if (bc.requires_grad) {
            double acc = 0.0;
            for (int64_t t = 0; t < T; ++t) acc += grow[t];
            (*bc.grad)[static_cast<size_t>(o)] += acc;
          }
          for (int64_t c = 0; c < C; ++c) {
            if (xc.requires_grad) {
              double* gx = xc.gptr() + (bi * C + c) * T;
              const double wv = pw[o * C + c];
              for (int64_t t = 0; t < T; ++t) gx[t] += wv * grow[t];
            }
            if (wc.requires_grad) {
              const double* xin = px + (bi * C + c) * T;
              double acc = 0.0;
              for (int64_t t = 0; t < T; ++t) acc += xin[t] * grow[t];
              (*wc.grad)[static_cast<size_t>(o * C + c)] += acc;
            }
          }
        }
    });
  }
  return out;
}

Tensor weight_norm(const Tensor& v, const Tensor& g, Tape* tape) {
  if (v.rank() != 2 || g.rank() != 1 || g.dim(0) != v.dim(0))
    fail(ErrorKind::dimension,
         "weight_norm: expects v:[rows,cols], g:[rows], got v" + shape_str(v.shape) + " g" + shape_str(g.shape));
  const int64_t rows = v.dim(0), cols = v.dim(1);
  Tensor out = make_out(v.shape);
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  {
    const double* pv = v.ptr();
    const double* pg = g.ptr();
    double* po = out.ptr();
    for (int64_t r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (int64_t c = 0; c < cols; ++c) sq += pv[r * cols + c] * pv[r * cols + c];
      const double norm = std::sqrt(sq);
      if (norm < std::numeric_limits<double>::min())
        fail(ErrorKind::singular, "weight_norm: zero-norm direction row " + std::to_string(r));
      (*norms)[static_cast<size_t>(r)] = norm;
      const double s = pg[r] / norm;
      for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = s * pv[r * cols + c];
    }
  }
  if (wants_grad(tape, {&v, &g})) {
    attach(out, tape);
    Tensor vc = v, gc = g, oc = out;
    if (vc.requires_grad) vc.ensure_grad();
    if (gc.requires_grad) gc.ensure_grad();
    tape->record(out, [vc, gc, oc, norms, rows, cols]() {
      const double* gy = oc.gptr();
      const double* pv = vc.ptr();
      const double* pg = gc.ptr();
      for (int64_t r = 0; r < rows; ++r) {
        const double norm = (*norms)[static_cast<size_t>(r)];
        // dot = <gy_row, v_row>/norm = <gy_row, unit_row>
        double dot = 0.0;
        for (int64_t c = 0; c < cols; ++c) dot += gy[r * cols + c] * pv[r * cols + c];
        dot /= norm;
        if (gc.requires_grad) (*gc.grad)[static_cast<size_t>(r)] += dot;
        if (vc.requires_grad) {
          double* gv = vc.gptr();
          const double s = pg[r] / norm;
          for (int64_t c = 0; c < cols; ++c) {
            const double unit = pv[r * cols + c] / norm;
            gv[r * cols + c] += s * (gy[r * cols + c] - dot * unit);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Tape* tape) {
  if (x.rank() != 3) fail(ErrorKind::dimension, "layer_norm: expects x:[B,C,T], got " + shape_str(x.shape));
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != C || bias.dim(0) != C)
    fail(ErrorKind::dimension, "layer_norm: gain/bias must be [C]=" + std::to_string(C) + ", got gain" +
                                   shape_str(gain.shape) + " bias" + shape_str(bias.shape));
  constexpr double kEps = 1e-5;
  Tensor out = make_out(x.shape);
  // cached per-(b,t) statistics for the backward pass
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(B * T));
  auto means = std::make_shared<std::vector<double>>(static_cast<size_t>(B * T));
  {
    const double* px = x.ptr();
    const double* pgn = gain.ptr();
    const double* pbs = bias.ptr();
    double* po = out.ptr();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t t = 0; t < T; ++t) {
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += px[(b * C + c) * T + t];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          const double d = px[(b * C + c) * T + t] - mu;
          var += d * d;
        }
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + kEps);
        (*means)[static_cast<size_t>(b * T + t)] = mu;
        (*inv_std)[static_cast<size_t>(b * T + t)] = is;
        for (int64_t c = 0; c < C; ++c)
          po[(b * C + c) * T + t] = (px[(b * C + c) * T + t] - mu) * is * pgn[c] + pbs[c];
      }
  }
  if (wants_grad(tape, {&x, &gain, &bias})) {
    attach(out, tape);
    Tensor xc = x, gc = gain, bc = bias, oc = out;
    if (xc.requires_grad) xc.ensure_grad();
    if (gc.requires_grad) gc.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [xc, gc, bc, oc, means, inv_std, B, C, T]() {
      const double* gy = oc.gptr();
      const double* px = xc.ptr();
      const double* pgn = gc.ptr();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t) {
          const double mu = (*means)[static_cast<size_t>(b * T + t)];
          const double is = (*inv_std)[static_cast<size_t>(b * T + t)];
          // h_c = gy_c * gain_c; dx = is * (h - mean(h) - xhat * mean(h*xhat))
          double mean_h = 0.0, mean_hx = 0.0;
          for (int64_t c = 0; c < C; ++c) {
            const double xhat = (px[(b * C + c) * T + t] - mu) * is;
            const double h = gy[(b * C + c) * T + t] * pgn[c];
            mean_h += h;
            mean_hx += h * xhat;
          }
          mean_h /= static_cast<double>(C);
          mean_hx /= static_cast<double>(C);
          for (int64_t c = 0; c < C; ++c) {
            const double xhat = (px[(b * C + c) * T + t] - mu) * is;
            const double g = gy[(b * C + c) * T + t];
            if (xc.requires_grad)
              (*xc.grad)[static_cast<size_t>((b * C + c) * T + t)] +=
                  is * (g * pgn[c] - mean_h - xhat * mean_hx);
            if (gc.requires_grad) (*gc.grad)[static_cast<size_t>(c)] += g * xhat;
            if (bc.requires_grad) (*bc.grad)[static_cast<size_t>(c)] += g;
          }
        }
    });
  }
  return out;
}

Tensor last_step(const Tensor& x, Tape* tape) {
  if (x.rank() != 3) fail(ErrorKind::dimension, "last_step: expects x:[B,C,T], got " + shape_str(x.shape));
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  Tensor out = make_out({B, C});
  {
    const double* px = x.ptr();
    double* po = out.ptr();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) po[b * C + c] = px[(b * C + c) * T + (T - 1)];
  }
  if (wants_grad(tape, {&x})) {
    attach(out, tape);
    Tensor xc = x, oc = out;
    xc.ensure_grad();
    tape->record(out, [xc, oc, B, C, T]() {
      const double* gy = oc.gptr();
      double* gx = xc.gptr();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) gx[(b * C + c) * T + (T - 1)] += gy[b * C + c];
    });
  }
  return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
  Tensor out = make_out({1});
  const int64_t n = a.numel();
  double acc = 0.0;
  const double* pa = a.ptr();
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  (*out.data)[0] = acc;
  if (wants_grad(tape, {&a})) {
    attach(out, tape);
    Tensor ac = a, oc = out;
    ac.ensure_grad();
    tape->record(out, [ac, oc, n]() {
      const double g = (*oc.grad)[0];
      double* ga = ac.gptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a, Tape* tape) {
  Tensor s = sum(a, tape);
  return scale(s, 1.0 / static_cast<double>(a.numel()), tape);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, Tape* tape) {
  check_same_shape("mse_loss", pred, target);
  const int64_t n = pred.numel();
  Tensor out = make_out({1});
  {
    const double* pp = pred.ptr();
    const double* pt = target.ptr();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = pp[i] - pt[i];
      acc += d * d;
    }
    (*out.data)[0] = acc / static_cast<double>(n);
  }
  if (wants_grad(tape, {&pred, &target})) {
    attach(out, tape);
    Tensor pc = pred, tc = target, oc = out;
    if (pc.requires_grad) pc.ensure_grad();
    if (tc.requires_grad) tc.ensure_grad();
    tape->record(out, [pc, tc, oc, n]() {
      const double g = (*oc.grad)[0] * 2.0 / static_cast<double>(n);
      const double* pp = pc.ptr();
      const double* pt = tc.ptr();
      for (int64_t i = 0; i < n; ++i) {
        const double d = g * (pp[i] - pt[i]);
        if (pc.requires_grad) (*pc.grad)[static_cast<size_t>(i)] += d;
        if (tc.requires_grad) (*tc.grad)[static_cast<size_t>(i)] -= d;
      }
    });
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& logits, const std::vector<int64_t>& targets, Tape* tape) {
  // rows: [N,C] -> N rows of stride 1; [B,C,T] -> B*T rows of stride T
  int64_t rows, classes, row_of, class_stride;
  if (logits.rank() == 2) {
    rows = logits.dim(0);
    classes = logits.dim(1);
    row_of = 0;
    class_stride = 1;
  } else if (logits.rank() == 3) {
    rows = logits.dim(0) * logits.dim(2);
    classes = logits.dim(1);
    row_of = logits.dim(2);  // rows enumerate (b,t)
    class_stride = logits.dim(2);
  } else {
    fail(ErrorKind::dimension, "cross_entropy: expects [N,C] or [B,C,T], got " + shape_str(logits.shape));
  }
  if (static_cast<int64_t>(targets.size()) != rows)
    fail(ErrorKind::dimension, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                   std::to_string(rows) + " rows");
  // Captured by the backward closure below, so no reference captures here.
  auto base_of = [row_of, classes](int64_t r) -> int64_t {
    if (row_of == 0) return r * classes;
    const int64_t b = r / row_of, t = r % row_of;
    return b * classes * row_of + t;
  };
  for (int64_t r = 0; r < rows; ++r)
    if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= classes)
      fail(ErrorKind::data, "cross_entropy: class index " + std::to_string(targets[static_cast<size_t>(r)]) +
                                " out of range [0," + std::to_string(classes) + ") at row " + std::to_string(r));

  Tensor out = make_out({1});
  auto lse = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  {
    const double* pl = logits.ptr();
    double acc = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
      const int64_t base = base_of(r);
      double mx = pl[base];
      for (int64_t c = 1; c < classes; ++c) mx = std::max(mx, pl[base + c * class_stride]);
      double se = 0.0;
      for (int64_t c = 0; c < classes; ++c) se += std::exp(pl[base + c * class_stride] - mx);
      const double l = mx + std::log(se);
      (*lse)[static_cast<size_t>(r)] = l;
      acc += l - pl[base + targets[static_cast<size_t>(r)] * class_stride];
    }
    (*out.data)[0] = acc / static_cast<double>(rows);
  }
  if (wants_grad(tape, {&logits})) {
    attach(out, tape);
    Tensor lc = logits, oc = out;
    lc.ensure_grad();
    tape->record(out, [lc, oc, lse, targets, rows, classes, class_stride, base_of]() {
      const double g = (*oc.grad)[0] / static_cast<double>(rows);
      const double* pl = lc.ptr();
      double* gl = lc.gptr();
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = base_of(r);
        const double l = (*lse)[static_cast<size_t>(r)];
        for (int64_t c = 0; c < classes; ++c) {
          const double p = std::exp(pl[base + c * class_stride] - l);
          const double ind = (c == targets[static_cast<size_t>(r)]) ? 1.0 : 0.0;
          gl[base + c * class_stride] += g * (p - ind);
        }
      }
    });
  }
  return out;
}

}  // namespace ckconv
