#include "kplab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gemm.hpp"

namespace kplab::ops {
namespace {

using Grads = std::span<const std::span<double>>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.shape() != b.shape())
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank)
    throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                              shape_str(t.shape()));
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                                              shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class F>
Tensor unary(const Tensor& x, F value_fn) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = value_fn(xd[i]);
  return Tensor::wrap(std::move(out), x.shape());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return Tape::record(Tensor::wrap(std::move(out), a.shape()), {&a, &b}, [](std::span<const double> g, Grads gin) {
    for (auto& buf : gin)
      if (!buf.empty())
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return Tape::record(Tensor::wrap(std::move(out), a.shape()), {&a, &b}, [](std::span<const double> g, Grads gin) {
    if (!gin[0].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
    if (!gin[1].empty())
      for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tape::record(Tensor::wrap(std::move(out), a.shape()), {&a, &b},
                      [a = a.detach(), b = b.detach()](std::span<const double> g, Grads gin) {
                        auto ad = a.data(), bd = b.data();
                        if (!gin[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * bd[i];
                        if (!gin[1].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * ad[i];
                      });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = unary(a, [s](double v) { return v * s; });
  return Tape::record(std::move(out), {&a}, [s](std::span<const double> g, Grads gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * s;
  });
}

Tensor relu(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
  return Tape::record(out, {&x}, [x = x.detach()](std::span<const double> g, Grads gin) {
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > 0.0) gin[0][i] += g[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary(x, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return Tape::record(out, {&x}, [y = out.detach()](std::span<const double> g, Grads gin) {
    auto yd = y.data();
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * yd[i] * (1.0 - yd[i]);
  });
}

Tensor abs(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return std::fabs(v); });
  return Tape::record(out, {&x}, [x = x.detach()](std::span<const double> g, Grads gin) {
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xd[i] > 0.0)
        gin[0][i] += g[i];
      else if (xd[i] < 0.0)
        gin[0][i] -= g[i];
    }
  });
}

Tensor square(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return v * v; });
  return Tape::record(out, {&x}, [x = x.detach()](std::span<const double> g, Grads gin) {
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += 2.0 * xd[i] * g[i];
  });
}

Tensor sum(const Tensor& x) {
  if (!x.defined()) throw Error(ErrorKind::ShapeMismatch, "sum: undefined tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tape::record(Tensor::wrap({s}, {1}), {&x}, [](std::span<const double> g, Grads gin) {
    for (auto& v : gin[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  return Tape::record(out, {&x}, [](std::span<const double> g, Grads gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw Error(ErrorKind::ShapeMismatch, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(m, n, k, a.ptr(), b.ptr(), out.data());
  return Tape::record(Tensor::wrap(std::move(out), {m, n}), {&a, &b},
                      [a = a.detach(), b = b.detach(), m, n, k](std::span<const double> g, Grads gin) {
                        if (!gin[0].empty()) detail::gemm_nt(m, k, n, g.data(), b.ptr(), gin[0].data());
                        if (!gin[1].empty()) detail::gemm_tn(k, n, m, a.ptr(), g.data(), gin[1].data());
                      });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  auto ad = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = ad[i * n + j];
  return Tape::record(Tensor::wrap(std::move(out), {n, m}), {&a}, [m, n](std::span<const double> g, Grads gin) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += g[j * m + i];
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n)
    throw Error(ErrorKind::ShapeMismatch, "add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
  return Tape::record(Tensor::wrap(std::move(out), x.shape()), {&x, &bias},
                      [m, n](std::span<const double> g, Grads gin) {
                        if (!gin[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                        if (!gin[1].empty())
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j) gin[1][j] += g[i * n + j];
                      });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (bias.numel() != c)
    throw Error(ErrorKind::ShapeMismatch,
                "add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += bd[ch];
  return Tape::record(Tensor::wrap(std::move(out), x.shape()), {&x, &bias},
                      [c, hw](std::span<const double> g, Grads gin) {
                        if (!gin[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                        if (!gin[1].empty())
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            double s = 0.0;
                            for (std::size_t p = 0; p < hw; ++p) s += g[ch * hw + p];
                            gin[1][ch] += s;
                          }
                      });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv2d");
  require_rank(kernels, 4, "conv2d");
  if (stride == 0) throw Error(ErrorKind::InvalidArgument, "conv2d: stride must be positive");
  const std::size_t ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t co = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != ci)
    throw Error(ErrorKind::ShapeMismatch,
                "conv2d: input " + shape_str(input.shape()) + " vs kernels " + shape_str(kernels.shape()));
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw Error(ErrorKind::ShapeMismatch, "conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t ck = ci * kh * kw, np = ho * wo;

  // im2col; the pointwise stride-1 case reads the input directly.
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
  std::shared_ptr<std::vector<double>> col;
  if (!pointwise) {
    col = std::make_shared<std::vector<double>>(ck * np, 0.0);
    auto in = input.data();
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          double* row = col->data() + ((c * kh + ky) * kw + kx) * np;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              row[oy * wo + ox] = in[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
          }
        }
  }
  const double* colp = pointwise ? input.ptr() : col->data();
  std::vector<double> out(co * np, 0.0);
  detail::gemm_nn(co, np, ck, kernels.ptr(), colp, out.data());

  return Tape::record(
      Tensor::wrap(std::move(out), {co, ho, wo}), {&input, &kernels},
      [input = input.detach(), kernels = kernels.detach(), col, pointwise, ci, h, w, co, kh, kw, ho, wo, ck, np,
       stride, padding](std::span<const double> g, Grads gin) {
        const double* colp = pointwise ? input.ptr() : col->data();
        if (!gin[1].empty()) detail::gemm_nt(co, ck, np, g.data(), colp, gin[1].data());
        if (gin[0].empty()) return;
        if (pointwise) {
          detail::gemm_tn(ck, np, co, kernels.ptr(), g.data(), gin[0].data());
          return;
        }
        std::vector<double> gcol(ck * np, 0.0);
        detail::gemm_tn(ck, np, co, kernels.ptr(), g.data(), gcol.data());
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const double* row = gcol.data() + ((c * kh + ky) * kw + kx) * np;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const auto iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const auto ix =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  gin[0][(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                      row[oy * wo + ox];
                }
              }
            }
      });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "upsample_nearest");
  if (factor == 0) throw Error(ErrorKind::InvalidArgument, "upsample_nearest: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), ho = h * factor, wo = w * factor;
  std::vector<double> out(c * ho * wo);
  auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx)
        out[(ch * ho + y) * wo + xx] = xd[(ch * h + y / factor) * w + xx / factor];
  return Tape::record(Tensor::wrap(std::move(out), {c, ho, wo}), {&x},
                      [c, h, w, ho, wo, factor](std::span<const double> g, Grads gin) {
                        for (std::size_t ch = 0; ch < c; ++ch)
                          for (std::size_t y = 0; y < ho; ++y)
                            for (std::size_t xx = 0; xx < wo; ++xx)
                              gin[0][(ch * h + y / factor) * w + xx / factor] += g[(ch * ho + y) * wo + xx];
                      });
}

Tensor avg_pool(const Tensor& x, std::size_t factor) {
  require_rank(x, 3, "avg_pool");
  if (factor == 0) throw Error(ErrorKind::InvalidArgument, "avg_pool: factor must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % factor != 0 || w % factor != 0)
    throw Error(ErrorKind::ShapeMismatch, "avg_pool: " + shape_str(x.shape()) + " not divisible by " +
                                              std::to_string(factor));
  const std::size_t ho = h / factor, wo = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  std::vector<double> out(c * ho * wo, 0.0);
  auto xd = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[(ch * ho + y / factor) * wo + xx / factor] += xd[(ch * h + y) * w + xx];
  for (auto& v : out) v *= inv;
  return Tape::record(Tensor::wrap(std::move(out), {c, ho, wo}), {&x},
                      [c, h, w, ho, wo, factor, inv](std::span<const double> g, Grads gin) {
                        for (std::size_t ch = 0; ch < c; ++ch)
                          for (std::size_t y = 0; y < h; ++y)
                            for (std::size_t xx = 0; xx < w; ++xx)
                              gin[0][(ch * h + y) * w + xx] += inv * g[(ch * ho + y / factor) * wo + xx / factor];
                      });
}

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "softmax_axis");
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xd[base];
      for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, xd[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double e = std::exp(xd[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= z;
    }
  Tensor y = Tensor::wrap(std::move(out), x.shape());
  return Tape::record(y, {&x}, [y = y.detach(), s](std::span<const double> g, Grads gin) {
    auto yd = y.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * yd[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = base + i * s.inner;
          gin[0][k] += yd[k] * (g[k] - dot);
        }
      }
  });
}

Tensor log_softmax_axis(const Tensor& x, std::size_t axis) {
  const auto s = split_axis(x.shape(), axis, "log_softmax_axis");
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = xd[base];
      for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, xd[base + i * s.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) z += std::exp(xd[base + i * s.inner] - mx);
      const double lz = mx + std::log(z);
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] = xd[base + i * s.inner] - lz;
    }
  Tensor y = Tensor::wrap(std::move(out), x.shape());
  return Tape::record(y, {&x}, [y = y.detach(), s](std::span<const double> g, Grads gin) {
    auto yd = y.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double gs = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) gs += g[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = base + i * s.inner;
          gin[0][k] += g[k] - std::exp(yd[k]) * gs;
        }
      }
  });
}

Tensor kl_div(const Tensor& log_pred, const Tensor& target, std::size_t axis) {
  require_same_shape(log_pred, target, "kl_div");
  const auto s = split_axis(target.shape(), axis, "kl_div");
  auto td = target.data();
  auto ld = log_pred.data();
  const double slices = static_cast<double>(s.outer * s.inner);
  double total = 0.0;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mass = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const double t = td[base + i * s.inner];
        if (!(t >= 0.0)) throw Error(ErrorKind::InvalidDistribution, "kl_div: negative target entry");
        mass += t;
        if (t > 0.0) total += t * (std::log(t) - ld[base + i * s.inner]);
      }
      if (std::fabs(mass - 1.0) > 1e-6)
        throw Error(ErrorKind::InvalidDistribution, "kl_div: target slice sums to " + std::to_string(mass));
    }
  return Tape::record(Tensor::wrap({total / slices}, {1}), {&log_pred},
                      [target = target.detach(), slices](std::span<const double> g, Grads gin) {
                        auto td = target.data();
                        const double c = g[0] / slices;
                        for (std::size_t i = 0; i < td.size(); ++i) gin[0][i] -= c * td[i];
                      });
}

Tensor bilinear_sample(const Tensor& featmap, std::span<const Point2> coords) {
  require_rank(featmap, 3, "bilinear_sample");
  const std::size_t c = featmap.dim(0), h = featmap.dim(1), w = featmap.dim(2);
  if (coords.empty()) throw Error(ErrorKind::ShapeMismatch, "bilinear_sample: no coordinates");
  struct Tap {
    std::size_t idx[4];
    double wt[4];
  };
  std::vector<Tap> taps(coords.size());
  auto axis_taps = [](double v, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "bilinear_sample: non-finite coordinate");
    v = std::clamp(v, 0.0, 1.0);
    double u = std::clamp(v * static_cast<double>(extent) - 0.5, 0.0, static_cast<double>(extent - 1));
    const double fl = std::floor(u);
    i0 = static_cast<std::size_t>(fl);
    i1 = std::min(i0 + 1, extent - 1);
    frac = u - fl;
  };
  for (std::size_t n = 0; n < coords.size(); ++n) {
    std::size_t x0, x1, y0, y1;
    double fx, fy;
    axis_taps(coords[n].x, w, x0, x1, fx);
    axis_taps(coords[n].y, h, y0, y1, fy);
    taps[n] = Tap{{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
                  {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy}};
  }
  std::vector<double> out(coords.size() * c, 0.0);
  auto fd = featmap.data();
  const std::size_t hw = h * w;
  for (std::size_t n = 0; n < coords.size(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double v = 0.0;
      for (int t = 0; t < 4; ++t) v += taps[n].wt[t] * fd[ch * hw + taps[n].idx[t]];
      out[n * c + ch] = v;
    }
  return Tape::record(Tensor::wrap(std::move(out), {coords.size(), c}), {&featmap},
                      [taps = std::move(taps), c, hw](std::span<const double> g, Grads gin) {
                        for (std::size_t n = 0; n < taps.size(); ++n)
                          for (std::size_t ch = 0; ch < c; ++ch)
                            for (int t = 0; t < 4; ++t)
                              gin[0][ch * hw + taps[n].idx[t]] += taps[n].wt[t] * g[n * c + ch];
                      });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  require_rank(x, 2, "gather_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (idx.empty()) throw Error(ErrorKind::ShapeMismatch, "gather_rows: empty index list");
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  for (auto r : rows)
    if (r >= m) throw Error(ErrorKind::IndexOutOfRange, "gather_rows: row " + std::to_string(r));
  std::vector<double> out(rows.size() * n);
  auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[rows[i] * n + j];
  Tensor y = Tensor::wrap(std::move(out), {rows.size(), n});
  return Tape::record(y, {&x},
                      [rows = std::move(rows), n](std::span<const double> g, Grads gin) {
                        for (std::size_t i = 0; i < rows.size(); ++i)
                          for (std::size_t j = 0; j < n; ++j) gin[0][rows[i] * n + j] += g[i * n + j];
                      });
}

Tensor row_norm(const Tensor& x) {
  require_rank(x, 2, "row_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xd[i * n + j] * xd[i * n + j];
    out[i] = std::sqrt(s);
  }
  Tensor y = Tensor::wrap(std::move(out), {m});
  return Tape::record(y, {&x}, [x = x.detach(), y = y.detach(), m, n](std::span<const double> g, Grads gin) {
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < m; ++i) {
      if (yd[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) gin[0][i * n + j] += g[i] * xd[i * n + j] / yd[i];
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0))
    throw Error(ErrorKind::ShapeMismatch, "concat_cols: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(m * (p + q));
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>(i * p), p, out.begin() + static_cast<std::ptrdiff_t>(i * (p + q)));
    std::copy_n(bd.begin() + static_cast<std::ptrdiff_t>(i * q), q,
                out.begin() + static_cast<std::ptrdiff_t>(i * (p + q) + p));
  }
  return Tape::record(Tensor::wrap(std::move(out), {m, p + q}), {&a, &b},
                      [m, p, q](std::span<const double> g, Grads gin) {
                        for (std::size_t i = 0; i < m; ++i) {
                          if (!gin[0].empty())
                            for (std::size_t j = 0; j < p; ++j) gin[0][i * p + j] += g[i * (p + q) + j];
                          if (!gin[1].empty())
                            for (std::size_t j = 0; j < q; ++j) gin[1][i * q + j] += g[i * (p + q) + p + j];
                        }
                      });
}

}  // namespace kplab::ops
