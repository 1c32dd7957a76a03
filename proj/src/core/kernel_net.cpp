#include "core/kernel_net.hpp"

#include <cmath>
#include <numbers>

namespace ckconv {

namespace {

constexpr int kZeroRowRetryCap = 100;

double row_norm(const Tensor& v, int64_t r) {
  const int64_t cols = v.dim(1);
  const double* pv = v.ptr();
  double sq = 0.0;
  for (int64_t c = 0; c < cols; ++c) sq += pv[r * cols + c] * pv[r * cols + c];
  return std::sqrt(sq);
}

// Draw every row of v from U(-bound, bound), re-drawing zero-norm rows.
void draw_rows(Tensor& v, double bound, Rng& rng) {
  const int64_t rows = v.dim(0), cols = v.dim(1);
  double* pv = v.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    int attempt = 0;
    for (;;) {
      for (int64_t c = 0; c < cols; ++c) pv[r * cols + c] = rng.uniform(-bound, bound);
      if (row_norm(v, r) > 0.0) break;
      if (++attempt >= kZeroRowRetryCap)
        fail(ErrorKind::singular, "kernel net init: zero-norm weight row persisted after " +
                                      std::to_string(kZeroRowRetryCap) + " redraws");
    }
  }
}

void set_gains_to_row_norms(WnLayer& layer) {
  double* pg = layer.g.ptr();
  for (int64_t r = 0; r < layer.out(); ++r) pg[r] = row_norm(layer.v, r);
}

// kernel[o,i,k] = y[k, o*I + i]
Tensor to_kernel_layout(const Tensor& y, int64_t O, int64_t I, Tape* tape) {
  const int64_t K = y.dim(0);
  Tensor out = Tensor::zeros({O, I, K});
  {
    const double* py = y.ptr();
    double* po = out.ptr();
    for (int64_t k = 0; k < K; ++k)
      for (int64_t o = 0; o < O; ++o)
        for (int64_t i = 0; i < I; ++i) po[(o * I + i) * K + k] = py[k * O * I + o * I + i];
  }
  if (tape && y.requires_grad) {
    out.requires_grad = true;
    out.ensure_grad();
    Tensor yc = y, oc = out;
    yc.ensure_grad();
    tape->record(out, [yc, oc, K, O, I]() {
      const double* go = oc.gptr();
      double* gy = yc.gptr();
      for (int64_t k = 0; k < K; ++k)
        for (int64_t o = 0; o < O; ++o)
          for (int64_t i = 0; i < I; ++i) gy[k * O * I + o * I + i] += go[(o * I + i) * K + k];
    });
  }
  return out;
}

}  // namespace

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "sine") return Nonlinearity::sine;
  if (s == "relu") return Nonlinearity::relu;
  if (s == "leaky_relu") return Nonlinearity::leaky_relu;
  if (s == "swish") return Nonlinearity::swish;
  fail(ErrorKind::config, "unknown nonlinearity '" + s + "' (expected sine|relu|leaky_relu|swish)");
}

std::string to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::sine: return "sine";
    case Nonlinearity::relu: return "relu";
    case Nonlinearity::leaky_relu: return "leaky_relu";
    case Nonlinearity::swish: return "swish";
  }
  return "?";
}

bool piecewise(Nonlinearity nl) { return nl == Nonlinearity::relu || nl == Nonlinearity::leaky_relu; }

PositionGrid make_grid(int64_t train_max_len, int64_t kernel_len, int64_t stride, int64_t sr_ratio,
                       bool train_time) {
  if (train_max_len < 1) fail(ErrorKind::config, "make_grid: train_max_len must be >= 1");
  if (kernel_len < 1) fail(ErrorKind::config, "make_grid: kernel_len must be >= 1");
  if (stride < 1) fail(ErrorKind::config, "make_grid: stride must be >= 1");
  if (sr_ratio < 1) fail(ErrorKind::config, "make_grid: sr_ratio must be >= 1");
  if (train_time && (kernel_len - 1) * stride > train_max_len * sr_ratio)
    fail(ErrorKind::horizon, "make_grid: step " + std::to_string((kernel_len - 1) * stride) +
                                 " exceeds the trained horizon " + std::to_string(train_max_len) +
                                 " (kernel_len=" + std::to_string(kernel_len) +
                                 ", stride=" + std::to_string(stride) + ")");
  PositionGrid grid;
  grid.train_max_len = train_max_len;
  grid.stride = stride;
  grid.sr_ratio = sr_ratio;
  grid.positions.resize(static_cast<size_t>(kernel_len));
  for (int64_t i = 0; i < kernel_len; ++i) {
    const double step = static_cast<double>(i * stride) / static_cast<double>(sr_ratio);
    grid.positions[static_cast<size_t>(i)] = normalized_position(step, train_max_len);
  }
  return grid;
}

KernelNet::KernelNet(int out_channels, int in_channels, int hidden, int depth, Nonlinearity nl, double omega0)
    : out_ch_(out_channels), in_ch_(in_channels), hidden_(hidden), depth_(depth), nl_(nl), omega0_(omega0) {
  if (out_channels < 1 || in_channels < 1) fail(ErrorKind::config, "kernel net: channel counts must be >= 1");
  if (depth < 1) fail(ErrorKind::config, "kernel net: depth must be >= 1");
  if (depth > 1 && hidden < 1) fail(ErrorKind::config, "kernel net: hidden width must be >= 1");
  if (nl == Nonlinearity::sine && !(omega0 > 0.0))
    fail(ErrorKind::config, "kernel net: omega0 must be positive, got " + std::to_string(omega0));
  const std::vector<int64_t> w = widths();
  layers_.resize(static_cast<size_t>(depth));
  for (int l = 0; l < depth; ++l) {
    layers_[static_cast<size_t>(l)].v = Tensor::zeros({w[static_cast<size_t>(l) + 1], w[static_cast<size_t>(l)]}, true);
    layers_[static_cast<size_t>(l)].g = Tensor::zeros({w[static_cast<size_t>(l) + 1]}, true);
    layers_[static_cast<size_t>(l)].b = Tensor::zeros({w[static_cast<size_t>(l) + 1]}, true);
  }
}

std::vector<int64_t> KernelNet::widths() const {
  std::vector<int64_t> w;
  w.push_back(1);
  for (int l = 0; l < depth_ - 1; ++l) w.push_back(hidden_);
  w.push_back(static_cast<int64_t>(out_ch_) * in_ch_);
  return w;
}

void KernelNet::init_siren(Rng& rng) {
  // First layer U(-1,1); deeper layers U(-sqrt(6/fan_in)/omega0, +...).
  // Gains take the row norms so the effective matrix equals the draw. Sine
  // layers get a bias inside one period of their unit, U(-pi/||w||, +pi/||w||)
  // (the sine wraps, so only the phase matters). The final affine layer has
  // no sine to wrap into: a period-sized bias there is a DC offset of tens of
  // units that optimization cannot close, so its bias draws from the same
  // small range as its weights.
  for (size_t l = 0; l < layers_.size(); ++l) {
    WnLayer& layer = layers_[l];
    const bool last = l + 1 == layers_.size();
    const double fan_in = static_cast<double>(layer.in());
    const double bound = (l == 0) ? 1.0 : std::sqrt(6.0 / fan_in) / omega0_;
    draw_rows(layer.v, bound, rng);
    set_gains_to_row_norms(layer);
    double* pb = layer.b.ptr();
    for (int64_t r = 0; r < layer.out(); ++r) {
      const double half = last ? bound : std::numbers::pi / row_norm(layer.v, r);
      pb[r] = rng.uniform(-half, half);
    }
  }
  bump_version();
}

void KernelNet::fill_fan_in_uniform(Rng& rng) {
  for (WnLayer& layer : layers_) {
    const double bound = std::sqrt(1.0 / static_cast<double>(layer.in()));
    draw_rows(layer.v, bound, rng);
    set_gains_to_row_norms(layer);
  }
}

void KernelNet::init_zero_bias(Rng& rng) {
  fill_fan_in_uniform(rng);
  for (WnLayer& layer : layers_) std::fill(layer.b.data->begin(), layer.b.data->end(), 0.0);
  bump_version();
}

Tensor KernelNet::hidden_activation(double position, int upto_layer) const {
  Tensor h = Tensor::from({1, 1}, {position});
  for (int l = 0; l < upto_layer; ++l) {
    const WnLayer& layer = layers_[static_cast<size_t>(l)];
    Tensor w = weight_norm(layer.v, layer.g);
    Tensor z = linear(h, w, layer.b);
    switch (nl_) {
      case Nonlinearity::sine: h = sine(scale(z, omega0_)); break;
      case Nonlinearity::relu: h = relu(z); break;
      case Nonlinearity::leaky_relu: h = leaky_relu(z); break;
      case Nonlinearity::swish: h = swish(z); break;
    }
  }
  return h;
}

void KernelNet::init_uniform_knots(Rng& rng) {
  if (!piecewise(nl_))
    fail(ErrorKind::config, "uniform-knot init requires a piecewise nonlinearity, got " + to_string(nl_));
  fill_fan_in_uniform(rng);
  // One knot per unit, equispaced over [-1,1]: bias cancels the preactivation
  // of the already-initialized prefix at that unit's knot, so each unit bends
  // exactly once inside the position range.
  for (size_t l = 0; l < layers_.size(); ++l) {
    WnLayer& layer = layers_[l];
    const int64_t width = layer.out();
    Tensor w = weight_norm(layer.v, layer.g);
    const double* pw = w.ptr();
    double* pb = layer.b.ptr();
    for (int64_t r = 0; r < width; ++r) {
      const double knot =
          width == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(r) / static_cast<double>(width - 1);
      Tensor h = hidden_activation(knot, static_cast<int>(l));
      const double* ph = h.ptr();
      double acc = 0.0;
      for (int64_t c = 0; c < layer.in(); ++c) acc += pw[r * layer.in() + c] * ph[c];
      pb[r] = -acc;
    }
  }
  bump_version();
}

Tensor KernelNet::forward(const Tensor& positions, Tape* tape) const {
  if (positions.rank() != 2 || positions.dim(1) != 1)
    fail(ErrorKind::dimension, "kernel net forward: positions must be [K,1], got " + shape_str(positions.shape));
  Tensor h = positions;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const WnLayer& layer = layers_[l];
    Tensor w = weight_norm(layer.v, layer.g, tape);
    Tensor z = linear(h, w, layer.b, tape);
    if (l + 1 < layers_.size()) {
      switch (nl_) {
        case Nonlinearity::sine: z = sine(scale(z, omega0_, tape), tape); break;
        case Nonlinearity::relu: z = relu(z, tape); break;
        case Nonlinearity::leaky_relu: z = leaky_relu(z, 0.01, tape); break;
        case Nonlinearity::swish: z = swish(z, tape); break;
      }
    }
    h = z;
  }
  return h;
}

Tensor KernelNet::sample(const std::vector<double>& positions, Tape* tape) const {
  if (positions.empty()) fail(ErrorKind::dimension, "sample: empty position list");
  Tensor pos = Tensor::from({static_cast<int64_t>(positions.size()), 1}, positions);
  Tensor y = forward(pos, tape);
  if (!all_finite(y))
    fail(ErrorKind::divergence,
         "kernel sample produced non-finite values (omega0=" + std::to_string(omega0_) + ")");
  return to_kernel_layout(y, out_ch_, in_ch_, tape);
}

Tensor KernelNet::sample(const PositionGrid& grid, Tape* tape) const { return sample(grid.positions, tape); }

std::vector<NamedParam> KernelNet::params(const std::string& prefix) {
  std::vector<NamedParam> out;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    out.push_back({base + ".v", layers_[l].v});
    out.push_back({base + ".g", layers_[l].g});
    out.push_back({base + ".b", layers_[l].b});
  }
  return out;
}

int64_t KernelNet::param_count() const {
  int64_t n = 0;
  for (const WnLayer& layer : layers_) n += layer.v.numel() + layer.g.numel() + layer.b.numel();
  return n;
}

}  // namespace ckconv
