#include "core/conv.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "core/fft.hpp"

namespace ckconv {

namespace {

void check_conv_shapes(const char* op, const Tensor& x, const Tensor& k, const Tensor& bias) {
  if (x.rank() != 3 || k.rank() != 3 || bias.rank() != 1)
    fail(ErrorKind::dimension, std::string(op) + ": expects x:[B,C,T], k:[O,C,K], bias:[O]");
  if (x.dim(1) != k.dim(1))
    fail(ErrorKind::dimension, std::string(op) + ": channel mismatch x" + shape_str(x.shape) + " vs k" +
                                   shape_str(k.shape));
  if (bias.dim(0) != k.dim(0))
    fail(ErrorKind::dimension, std::string(op) + ": bias" + shape_str(bias.shape) + " vs k" +
                                   shape_str(k.shape));
}

}  // namespace

Tensor causal_conv_direct(const Tensor& x, const Tensor& k, const Tensor& bias, Tape* tape) {
  check_conv_shapes("causal_conv_direct", x, k, bias);
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = k.dim(0), K = k.dim(2);
  Tensor out = Tensor::zeros({B, O, T});
  {
    const double* px = x.ptr();
    const double* pk = k.ptr();
    const double* pb = bias.ptr();
    double* po = out.ptr();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < O; ++o)
        for (int64_t t = 0; t < T; ++t) {
          double acc = pb[o];
          const int64_t tau_max = std::min(t, K - 1);
          for (int64_t c = 0; c < C; ++c) {
            const double* krow = pk + (o * C + c) * K;
            const double* xrow = px + (b * C + c) * T;
            for (int64_t tau = 0; tau <= tau_max; ++tau) acc += krow[tau] * xrow[t - tau];
          }
          po[(b * O + o) * T + t] = acc;
        }
  }
  if (tape && (x.requires_grad || k.requires_grad || bias.requires_grad)) {
    out.requires_grad = true;
    out.ensure_grad();
    Tensor xc = x, kc = k, bc = bias, oc = out;
    if (xc.requires_grad) xc.ensure_grad();
    if (kc.requires_grad) kc.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [xc, kc, bc, oc, B, C, T, O, K]() {
      const double* gy = oc.gptr();
      const double* px = xc.ptr();
      const double* pk = kc.ptr();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t o = 0; o < O; ++o) {
          const double* grow = gy + (b * O + o) * T;
          if (bc.requires_grad) {
            double acc = 0.0;
            for (int64_t t = 0; t < T; ++t) acc += grow[t];
            (*bc.grad)[static_cast<size_t>(o)] += acc;
          }
          for (int64_t c = 0; c < C; ++c) {
            if (xc.requires_grad) {
              double* gx = xc.gptr() + (b * C + c) * T;
              const double* krow = pk + (o * C + c) * K;
              for (int64_t s = 0; s < T; ++s) {
                double acc = 0.0;
                const int64_t tau_max = std::min(K - 1, T - 1 - s);
                for (int64_t tau = 0; tau <= tau_max; ++tau) acc += grow[s + tau] * krow[tau];
                gx[s] += acc;
              }
            }
            if (kc.requires_grad) {
              double* gk = kc.gptr() + (o * C + c) * K;
              const double* xrow = px + (b * C + c) * T;
              const int64_t tau_max = std::min(K - 1, T - 1);
              for (int64_t tau = 0; tau <= tau_max; ++tau) {
                double acc = 0.0;
                for (int64_t t = tau; t < T; ++t) acc += grow[t] * xrow[t - tau];
                gk[tau] += acc;
              }
            }
          }
        }
    });
  }
  return out;
}

Tensor causal_conv_fft(const Tensor& x, const Tensor& k, const Tensor& bias, Tape* tape) {
  check_conv_shapes("causal_conv_fft", x, k, bias);
  const int64_t B = x.dim(0), C = x.dim(1), T = x.dim(2), O = k.dim(0), K = k.dim(2);
  const int64_t Kp = std::min(K, T);  // taps past the input never contribute
  const size_t Lf = next_pow2(static_cast<size_t>(std::max<int64_t>(2 * T - 1, 1)));
  const size_t bins = Lf / 2 + 1;

  auto Xf = std::make_shared<std::vector<std::vector<cplx>>>();
  auto Kf = std::make_shared<std::vector<std::vector<cplx>>>();
  Xf->reserve(static_cast<size_t>(B * C));
  Kf->reserve(static_cast<size_t>(O * C));
  {
    std::vector<double> row(static_cast<size_t>(T));
    for (int64_t b = 0; b < B; ++b)
      for (int64_t c = 0; c < C; ++c) {
        std::memcpy(row.data(), x.ptr() + (b * C + c) * T, sizeof(double) * static_cast<size_t>(T));
        Xf->push_back(rfft(row, Lf));
      }
  }
  {
    std::vector<double> row(static_cast<size_t>(Kp));
    for (int64_t o = 0; o < O; ++o)
      for (int64_t c = 0; c < C; ++c) {
        std::memcpy(row.data(), k.ptr() + (o * C + c) * K, sizeof(double) * static_cast<size_t>(Kp));
        Kf->push_back(rfft(row, Lf));
      }
  }

  Tensor out = Tensor::zeros({B, O, T});
  {
    std::vector<cplx> acc(bins);
    double* po = out.ptr();
    const double* pb = bias.ptr();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t o = 0; o < O; ++o) {
        std::fill(acc.begin(), acc.end(), cplx(0.0, 0.0));
        for (int64_t c = 0; c < C; ++c) {
          const auto& xs = (*Xf)[static_cast<size_t>(b * C + c)];
          const auto& ks = (*Kf)[static_cast<size_t>(o * C + c)];
          for (size_t f = 0; f < bins; ++f) acc[f] += xs[f] * ks[f];
        }
        const std::vector<double> y = irfft(acc, Lf);
        double* row = po + (b * O + o) * T;
        for (int64_t t = 0; t < T; ++t) row[t] = y[static_cast<size_t>(t)] + pb[o];
      }
  }

  if (tape && (x.requires_grad || k.requires_grad || bias.requires_grad)) {
    out.requires_grad = true;
    out.ensure_grad();
    Tensor xc = x, kc = k, bc = bias, oc = out;
    if (xc.requires_grad) xc.ensure_grad();
    if (kc.requires_grad) kc.ensure_grad();
    if (bc.requires_grad) bc.ensure_grad();
    tape->record(out, [xc, kc, bc, oc, Xf, Kf, B, C, T, O, K, Kp, Lf, bins]() {
      const double* gy = oc.gptr();
      // Spectra of the incoming gradient rows.
      std::vector<std::vector<cplx>> Gf(static_cast<size_t>(B * O));
      {
        std::vector<double> row(static_cast<size_t>(T));
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) {
            std::memcpy(row.data(), gy + (b * O + o) * T, sizeof(double) * static_cast<size_t>(T));
            Gf[static_cast<size_t>(b * O + o)] = rfft(row, Lf);
          }
      }
      std::vector<cplx> acc(bins);
      if (xc.requires_grad) {
        // gx = correlation of gy with k: spectrum GY * conj(KF)
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            std::fill(acc.begin(), acc.end(), cplx(0.0, 0.0));
            for (int64_t o = 0; o < O; ++o) {
              const auto& gs = Gf[static_cast<size_t>(b * O + o)];
              const auto& ks = (*Kf)[static_cast<size_t>(o * C + c)];
              for (size_t f = 0; f < bins; ++f) acc[f] += gs[f] * std::conj(ks[f]);
            }
            const std::vector<double> gxr = irfft(acc, Lf);
            double* gx = xc.gptr() + (b * C + c) * T;
            for (int64_t t = 0; t < T; ++t) gx[t] += gxr[static_cast<size_t>(t)];
          }
      }
      if (kc.requires_grad) {
        // gk = correlation of gy with x: spectrum GY * conj(XF); taps >= Kp stay zero
        for (int64_t o = 0; o < O; ++o)
          for (int64_t c = 0; c < C; ++c) {
            std::fill(acc.begin(), acc.end(), cplx(0.0, 0.0));
            for (int64_t b = 0; b < B; ++b) {
              const auto& gs = Gf[static_cast<size_t>(b * O + o)];
              const auto& xs = (*Xf)[static_cast<size_t>(b * C + c)];
              for (size_t f = 0; f < bins; ++f) acc[f] += gs[f] * std::conj(xs[f]);
            }
            const std::vector<double> gkr = irfft(acc, Lf);
            double* gk = kc.gptr() + (o * C + c) * K;
            for (int64_t tau = 0; tau < Kp; ++tau) gk[tau] += gkr[static_cast<size_t>(tau)];
          }
      }
      if (bc.requires_grad) {
        for (int64_t b = 0; b < B; ++b)
          for (int64_t o = 0; o < O; ++o) {
            const double* grow = gy + (b * O + o) * T;
            double s = 0.0;
            for (int64_t t = 0; t < T; ++t) s += grow[t];
            (*bc.grad)[static_cast<size_t>(o)] += s;
          }
      }
    });
  }
  return out;
}

std::vector<double> blur_taps(int64_t ratio) {
  if (ratio < 1) fail(ErrorKind::config, "blur_taps: ratio must be >= 1, got " + std::to_string(ratio));
  constexpr double kSigma = 0.5;
  std::vector<double> taps(static_cast<size_t>(2 * ratio + 1));
  double total = 0.0;
  for (int64_t off = -ratio; off <= ratio; ++off) {
    const double v = std::exp(-static_cast<double>(off * off) / (2.0 * kSigma * kSigma));
    taps[static_cast<size_t>(off + ratio)] = v;
    total += v;
  }
  for (double& t : taps) t /= total;
  return taps;
}

Tensor blur_kernel(const Tensor& k, const std::vector<double>& taps, Tape* tape) {
  if (k.rank() != 3) fail(ErrorKind::dimension, "blur_kernel: expects k:[O,C,K]");
  if (taps.empty() || taps.size() % 2 == 0) fail(ErrorKind::config, "blur_kernel: taps must have odd length");
  const int64_t O = k.dim(0), C = k.dim(1), K = k.dim(2);
  const int64_t r = static_cast<int64_t>(taps.size() / 2);
  Tensor out = Tensor::zeros(k.shape);
  {
    const double* pk = k.ptr();
    double* po = out.ptr();
    for (int64_t row = 0; row < O * C; ++row)
      for (int64_t t = 0; t < K; ++t) {
        double acc = 0.0;
        for (int64_t j = -r; j <= r; ++j) {
          const int64_t u = t - j;
          if (u >= 0 && u < K) acc += taps[static_cast<size_t>(j + r)] * pk[row * K + u];
        }
        po[row * K + t] = acc;
      }
  }
  if (tape && k.requires_grad) {
    out.requires_grad = true;
    out.ensure_grad();
    Tensor kc = k, oc = out;
    kc.ensure_grad();
    tape->record(out, [kc, oc, taps, O, C, K, r]() {
      const double* go = oc.gptr();
      double* gk = kc.gptr();
      for (int64_t row = 0; row < O * C; ++row)
        for (int64_t u = 0; u < K; ++u) {
          double acc = 0.0;
          for (int64_t j = -r; j <= r; ++j) {
            const int64_t t = u + j;
            if (t >= 0 && t < K) acc += taps[static_cast<size_t>(j + r)] * go[row * K + t];
          }
          gk[row * K + u] += acc;
        }
    });
  }
  return out;
}

CkconvLayer::CkconvLayer(int out_ch, int in_ch, int64_t train_max_len, int64_t horizon_len, int kernel_hidden,
                         int kernel_depth, Nonlinearity nl, double omega0)
    : net(out_ch, in_ch, kernel_hidden, kernel_depth, nl, omega0),
      bias(Tensor::zeros({out_ch}, true)),
      train_max_len(train_max_len),
      horizon(horizon_len) {
  if (train_max_len < 1) fail(ErrorKind::config, "ckconv layer: train_max_len must be >= 1");
  if (horizon_len < 0) fail(ErrorKind::config, "ckconv layer: horizon must be 0 (global) or positive");
}

Tensor CkconvLayer::sampled_kernel(int64_t T, const Resample& rs, bool train_time, Tape* tape) const {
  if (T < 1) fail(ErrorKind::dimension, "ckconv: input length must be >= 1");
  if (rs.stride < 1 || rs.sr_ratio < 1)
    fail(ErrorKind::config, "ckconv: stride and sr_ratio must be >= 1, got stride=" +
                                std::to_string(rs.stride) + " sr_ratio=" + std::to_string(rs.sr_ratio));
  const int64_t kernel_len = horizon > 0 ? std::min(horizon, T) : T;
  const bool finer = rs.sr_ratio > rs.stride;
  int64_t blur_ratio = 1;
  if (finer) {
    if (rs.sr_ratio % rs.stride != 0)
      fail(ErrorKind::config, "ckconv: non-integer rate ratio " + std::to_string(rs.sr_ratio) + "/" +
                                  std::to_string(rs.stride) + " is not supported");
    blur_ratio = rs.sr_ratio / rs.stride;
  }

  // Do not let a cache hit (warmed by an eval pass) bypass the horizon
  // contract; the grid itself also checks, but only on a miss.
  if (train_time && (kernel_len - 1) * rs.stride > train_max_len * rs.sr_ratio)
    fail(ErrorKind::horizon, "ckconv: step " + std::to_string((kernel_len - 1) * rs.stride) +
                                 " exceeds the trained horizon " + std::to_string(train_max_len * rs.sr_ratio));

  const CacheKey key{kernel_len, rs.stride, rs.sr_ratio, net.version()};
  if (!tape && cache_val_ && cache_key_ == key) return *cache_val_;

  const PositionGrid grid = make_grid(train_max_len, kernel_len, rs.stride, rs.sr_ratio, train_time);
  Tensor kern = net.sample(grid, tape);
  if (finer) kern = blur_kernel(kern, blur_taps(blur_ratio), tape);
  // Riemann normalization into the train-rate scale: responses computed at
  // sr_test are multiplied by sr_train/sr_test = stride/sr_ratio.
  const double rate = static_cast<double>(rs.stride) / static_cast<double>(rs.sr_ratio);
  if (rate != 1.0) kern = scale(kern, rate, tape);

  if (!tape) {
    cache_key_ = key;
    cache_val_ = kern;
  }
  return kern;
}

Tensor CkconvLayer::forward(const Tensor& x, const Resample& rs, bool train_time, Tape* tape) const {
  if (x.rank() != 3) fail(ErrorKind::dimension, "ckconv forward: expects x:[B,C,T]");
  if (x.dim(1) != net.in_channels())
    fail(ErrorKind::dimension, "ckconv forward: " + std::to_string(x.dim(1)) + " input channels, layer has " +
                                   std::to_string(net.in_channels()));
  Tensor kern = sampled_kernel(x.dim(2), rs, train_time, tape);
  return causal_conv_fft(x, kern, bias, tape);
}

std::vector<NamedParam> CkconvLayer::params(const std::string& prefix) {
  std::vector<NamedParam> out = net.params(prefix + ".net");
  out.push_back({prefix + ".bias", bias});
  return out;
}

void CkconvLayer::invalidate_cache() const {
  cache_val_.reset();
  cache_key_ = CacheKey{};
}

std::vector<double> gap_density(const std::vector<double>& positions) {
  const size_t n = positions.size();
  std::vector<double> s(n, 1.0);
  if (n > 1) {
    for (size_t i = 0; i < n; ++i) {
      const double prev = i > 0 ? positions[i] - positions[i - 1] : 0.0;
      const double next = i + 1 < n ? positions[i + 1] - positions[i] : 0.0;
      if (i == 0)
        s[i] = next;
      else if (i + 1 == n)
        s[i] = prev;
      else
        s[i] = 0.5 * (prev + next);
    }
  }
  return s;
}

Tensor irregular_conv(const CkconvLayer& layer, const Tensor& values,
                      const std::vector<std::vector<double>>& positions,
                      const std::vector<std::vector<double>>& density,
                      const std::vector<int64_t>& out_indices) {
  if (values.rank() != 3) fail(ErrorKind::dimension, "irregular_conv: expects values:[B,C,n]");
  const int64_t B = values.dim(0), C = values.dim(1), n = values.dim(2);
  if (C != layer.net.in_channels())
    fail(ErrorKind::dimension, "irregular_conv: " + std::to_string(C) + " channels, layer has " +
                                   std::to_string(layer.net.in_channels()));
  if (static_cast<int64_t>(positions.size()) != B)
    fail(ErrorKind::data, "irregular_conv: one position list per sample required");
  if (!density.empty() && static_cast<int64_t>(density.size()) != B)
    fail(ErrorKind::data, "irregular_conv: density must be empty or one list per sample");

  std::vector<int64_t> outs = out_indices;
  if (outs.empty()) {
    outs.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) outs[static_cast<size_t>(j)] = j;
  }
  for (int64_t j : outs)
    if (j < 0 || j >= n) fail(ErrorKind::data, "irregular_conv: output index out of range");

  const int64_t O = layer.net.out_channels();
  Tensor out = Tensor::zeros({B, O, static_cast<int64_t>(outs.size())});
  double* po = out.ptr();
  const double* pb = layer.bias.ptr();

  for (int64_t b = 0; b < B; ++b) {
    const auto& pos = positions[static_cast<size_t>(b)];
    if (static_cast<int64_t>(pos.size()) != n)
      fail(ErrorKind::data, "irregular_conv: sample " + std::to_string(b) + " has " +
                                std::to_string(pos.size()) + " positions for " + std::to_string(n) + " values");
    for (int64_t i = 1; i < n; ++i)
      if (!(pos[static_cast<size_t>(i)] > pos[static_cast<size_t>(i - 1)]))
        fail(ErrorKind::data,
             "irregular_conv: positions of sample " + std::to_string(b) + " must be strictly increasing");

    std::vector<double> s;
    if (density.empty()) {
      s = gap_density(pos);
    } else {
      s = density[static_cast<size_t>(b)];
      if (static_cast<int64_t>(s.size()) != n)
        fail(ErrorKind::data, "irregular_conv: density of sample " + std::to_string(b) + " has wrong length");
      for (double w : s)
        if (!std::isfinite(w) || w <= 0.0)
          fail(ErrorKind::data, "irregular_conv: density weights must be positive and finite");
    }

    // Deduplicated relative offsets, rendered through the kernel net once.
    std::vector<double> deltas;
    std::unordered_map<uint64_t, int64_t> delta_index;
    auto index_of = [&](double d) -> int64_t {
      uint64_t bits;
      std::memcpy(&bits, &d, sizeof(bits));
      auto it = delta_index.find(bits);
      if (it != delta_index.end()) return it->second;
      const int64_t idx = static_cast<int64_t>(deltas.size());
      deltas.push_back(d);
      delta_index.emplace(bits, idx);
      return idx;
    };
    std::vector<std::vector<int64_t>> pair_idx(outs.size());
    for (size_t jj = 0; jj < outs.size(); ++jj) {
      const int64_t j = outs[jj];
      pair_idx[jj].resize(static_cast<size_t>(j + 1));
      for (int64_t i = 0; i <= j; ++i)
        pair_idx[jj][static_cast<size_t>(i)] =
            index_of(pos[static_cast<size_t>(j)] - pos[static_cast<size_t>(i)]);
    }
    std::vector<double> norm(deltas.size());
    for (size_t u = 0; u < deltas.size(); ++u) norm[u] = normalized_position(deltas[u], layer.train_max_len);
    const Tensor kern = layer.net.sample(norm);  // [O, C, U]
    const double* pk = kern.ptr();
    const int64_t U = static_cast<int64_t>(deltas.size());

    const double* px = values.ptr() + b * C * n;
    for (size_t jj = 0; jj < outs.size(); ++jj) {
      const int64_t j = outs[jj];
      for (int64_t o = 0; o < O; ++o) {
        double acc = pb[o];
        // channels outer, positions descending == offsets ascending, matching
        // the summation order of causal_conv_direct bit for bit when s == 1
        for (int64_t c = 0; c < C; ++c) {
          const double* krow = pk + (o * C + c) * U;
          const double* xrow = px + c * n;
          for (int64_t i = j; i >= 0; --i)
            acc += s[static_cast<size_t>(i)] * xrow[i] * krow[pair_idx[jj][static_cast<size_t>(i)]];
        }
        po[(b * O + o) * static_cast<int64_t>(outs.size()) + static_cast<int64_t>(jj)] = acc;
      }
    }
  }
  return out;
}

double spectral_radius_est(const Tensor& W) {
  if (W.rank() != 2 || W.dim(0) != W.dim(1)) fail(ErrorKind::dimension, "spectral_radius_est: W must be square");
  const int64_t H = W.dim(0);
  std::vector<double> M(W.ptr(), W.ptr() + W.numel()), next(static_cast<size_t>(H * H));
  double log_rho = 0.0, weight = 1.0;
  for (int q = 0; q < 40; ++q) {
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < H; ++j) {
        double acc = 0.0;
        for (int64_t p = 0; p < H; ++p)
          acc += M[static_cast<size_t>(i * H + p)] * M[static_cast<size_t>(p * H + j)];
        next[static_cast<size_t>(i * H + j)] = acc;
      }
    double frob = 0.0;
    for (double x : next) frob += x * x;
    frob = std::sqrt(frob);
    if (frob == 0.0) return 0.0;
    weight *= 0.5;
    log_rho += weight * std::log(frob);
    for (size_t i = 0; i < next.size(); ++i) M[i] = next[i] / frob;
  }
  return std::exp(log_rho);
}

Tensor linear_rnn_kernel(const Tensor& W, const Tensor& U, int64_t T) {
  if (W.rank() != 2 || W.dim(0) != W.dim(1)) fail(ErrorKind::dimension, "linear_rnn_kernel: W must be square");
  if (U.rank() != 2 || U.dim(0) != W.dim(0))
    fail(ErrorKind::dimension, "linear_rnn_kernel: U must be [H,Cin] with H matching W");
  if (T < 1) fail(ErrorKind::dimension, "linear_rnn_kernel: T must be >= 1");
  const int64_t H = W.dim(0), Cin = U.dim(1);
  Tensor k = Tensor::zeros({H, Cin, T});
  const double* pw = W.ptr();
  const double* pu = U.ptr();
  double* pk = k.ptr();
  // tau = 0 slice is U itself
  for (int64_t h = 0; h < H; ++h)
    for (int64_t c = 0; c < Cin; ++c) pk[(h * Cin + c) * T + 0] = pu[h * Cin + c];
  for (int64_t tau = 1; tau < T; ++tau)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t c = 0; c < Cin; ++c) {
        double acc = 0.0;
        for (int64_t m = 0; m < H; ++m) acc += pw[h * H + m] * pk[(m * Cin + c) * T + (tau - 1)];
        pk[(h * Cin + c) * T + tau] = acc;
      }
  return k;
}

Tensor linear_rnn_unroll(const Tensor& W, const Tensor& U, const Tensor& x) {
  if (W.rank() != 2 || W.dim(0) != W.dim(1)) fail(ErrorKind::dimension, "linear_rnn_unroll: W must be square");
  if (U.rank() != 2 || U.dim(0) != W.dim(0))
    fail(ErrorKind::dimension, "linear_rnn_unroll: U must be [H,Cin] with H matching W");
  if (x.rank() != 3 || x.dim(1) != U.dim(1))
    fail(ErrorKind::dimension, "linear_rnn_unroll: x must be [B,Cin,T] with Cin matching U");
  const int64_t H = W.dim(0), Cin = U.dim(1), B = x.dim(0), T = x.dim(2);
  Tensor out = Tensor::zeros({B, H, T});
  const double* pw = W.ptr();
  const double* pu = U.ptr();
  const double* px = x.ptr();
  double* po = out.ptr();
  std::vector<double> h(static_cast<size_t>(H)), hn(static_cast<size_t>(H));
  for (int64_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), 0.0);
    for (int64_t t = 0; t < T; ++t) {
      for (int64_t i = 0; i < H; ++i) {
        double acc = 0.0;
        for (int64_t m = 0; m < H; ++m) acc += pw[i * H + m] * h[static_cast<size_t>(m)];
        for (int64_t c = 0; c < Cin; ++c) acc += pu[i * Cin + c] * px[(b * Cin + c) * T + t];
        hn[static_cast<size_t>(i)] = acc;
      }
      std::swap(h, hn);
      for (int64_t i = 0; i < H; ++i) po[(b * H + i) * T + t] = h[static_cast<size_t>(i)];
    }
  }
  return out;
}

}  // namespace ckconv
