#include "cellseg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <omp.h>

namespace cellseg {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

namespace kernels {

void check_conv_shapes(const Shape& x, const Shape& weight, std::size_t bias_len, std::size_t stride,
                       std::size_t pad) {
  if (weight.h != weight.w || weight.h == 0) {
    throw ShapeError("conv2d: kernel must be square, got " + weight.str());
  }
  if (x.c != weight.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, weight expects " +
                     std::to_string(weight.c));
  }
  if (bias_len != 0 && bias_len != weight.n) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias_len) + " != c_out " +
                     std::to_string(weight.n));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (x.h + 2 * pad < weight.h || x.w + 2 * pad < weight.w) {
    throw ShapeError("conv2d: kernel larger than padded input " + x.str());
  }
}

namespace {

constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 32;
constexpr std::size_t kKc = 256;

// Full kMr x kNr tile against a packed (k x kNr) panel of B; accumulators stay
// in registers across the k loop.
template <class T>
inline void micro_tile(std::size_t ldc, std::size_t lda, std::size_t k, const T* a, const T* panel, T* c,
                       bool accumulate) {
  T acc[kMr][kNr];
  for (std::size_t r = 0; r < kMr; ++r) {
    for (std::size_t j = 0; j < kNr; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : T{0};
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = panel + p * kNr;
    for (std::size_t r = 0; r < kMr; ++r) {
      const T av = a[r * lda + p];
#pragma omp simd
      for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < kMr; ++r) {
    for (std::size_t j = 0; j < kNr; ++j) c[r * ldc + j] = acc[r][j];
  }
}

// Ragged edge tile; same per-element reduction order as micro_tile.
template <class T>
inline void edge_tile(std::size_t rows, std::size_t cols, std::size_t ldc, std::size_t lda, std::size_t k,
                      const T* a, const T* panel, T* c, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T acc[kNr];
    for (std::size_t j = 0; j < cols; ++j) acc[j] = accumulate ? c[r * ldc + j] : T{0};
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[r * lda + p];
      const T* brow = panel + p * kNr;
      for (std::size_t j = 0; j < cols; ++j) acc[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] = acc[j];
  }
}

template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  const std::size_t p = oh * ow;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < static_cast<std::ptrdiff_t>(c * k * k); ++row) {
    const std::size_t ci = static_cast<std::size_t>(row) / (k * k);
    const std::size_t ky = (static_cast<std::size_t>(row) / k) % k;
    const std::size_t kx = static_cast<std::size_t>(row) % k;
    const T* plane = x + ci * h * w;
    T* out = col + static_cast<std::size_t>(row) * p;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
      T* orow = out + oy * ow;
      if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
        std::fill(orow, orow + ow, T{0});
        continue;
      }
      const T* irow = plane + static_cast<std::size_t>(iy) * w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
        orow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : irow[ix];
      }
    }
  }
}

// dx += col2im(dcol). Parallel over input channels; each channel owns its plane.
template <class T>
void col2im_add(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                std::size_t pad, std::size_t oh, std::size_t ow, T* dx) {
  const std::size_t p = oh * ow;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(c); ++ci) {
    T* plane = dx + static_cast<std::size_t>(ci) * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * p;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* irow = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            irow[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t kBlock = 32;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rb = 0; rb < static_cast<std::ptrdiff_t>(rows); rb += kBlock) {
    const std::size_t r0 = static_cast<std::size_t>(rb);
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
      }
    }
  }
}

bool is_pointwise(std::size_t k, std::size_t stride, std::size_t pad) { return k == 1 && stride == 1 && pad == 0; }

// Bilinear source coordinate for output index o (half-pixel centres).
struct Tap {
  std::size_t i0, i1;
  double frac;
};

Tap bilinear_tap(std::size_t o, std::size_t factor, std::size_t in) {
  double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
  if (src < 0) src = 0;
  auto i0 = static_cast<std::size_t>(std::floor(src));
  if (i0 > in - 1) i0 = in - 1;
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  return {i0, i1, src - static_cast<double>(i0)};
}

}  // namespace

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  const std::size_t col_tiles = (n + kNr - 1) / kNr;
  // k is split into chunks processed in ascending order, so every element of C
  // still sees its products summed in k order.
  for (std::size_t k0 = 0; k0 < k || (k == 0 && k0 == 0); k0 += kKc) {
    const std::size_t kc = std::min(kKc, k - k0);
    const bool acc = accumulate || k0 > 0;
#pragma omp parallel
    {
      std::vector<T> panel(kc * kNr);
#pragma omp for schedule(static)
      for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(col_tiles); ++t) {
        const std::size_t j0 = static_cast<std::size_t>(t) * kNr;
        const std::size_t cols = std::min(kNr, n - j0);
        for (std::size_t p = 0; p < kc; ++p) {
          const T* src = b + (k0 + p) * n + j0;
          T* dst = panel.data() + p * kNr;
          std::copy(src, src + cols, dst);
          std::fill(dst + cols, dst + kNr, T{0});
        }
        for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
          const std::size_t rows = std::min(kMr, m - i0);
          const T* ap = a + i0 * k + k0;
          T* cp = c + i0 * n + j0;
          if (rows == kMr && cols == kNr) {
            micro_tile(n, k, kc, ap, panel.data(), cp, acc);
          } else {
            edge_tile(rows, cols, n, k, kc, ap, panel.data(), cp, acc);
          }
        }
      }
    }
    if (k == 0) break;
  }
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias,
                         std::size_t stride, std::size_t pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  check_conv_shapes(xs, ws, bias.size(), stride, pad);
  const std::size_t k = ws.h;
  const std::size_t oh = conv_out_size(xs.h, k, stride, pad);
  const std::size_t ow = conv_out_size(xs.w, k, stride, pad);
  const std::size_t p = oh * ow;
  const std::size_t kk = xs.c * k * k;
  Tensor<T> out(Shape{xs.n, ws.n, oh, ow});
  std::vector<T> col;
  if (!is_pointwise(k, stride, pad)) col.resize(kk * p);
  for (std::size_t b = 0; b < xs.n; ++b) {
    T* y = out.plane(b, 0);
    for (std::size_t co = 0; co < ws.n; ++co) {
      std::fill(y + co * p, y + (co + 1) * p, bias.empty() ? T{0} : bias[co]);
    }
    const T* src = x.plane(b, 0);
    if (!col.empty()) {
      im2col(src, xs.c, xs.h, xs.w, k, stride, pad, oh, ow, col.data());
      src = col.data();
    }
    gemm(ws.n, p, kk, weight.data(), src, y, true);
  }
  return out;
}

template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     std::size_t stride, std::size_t pad, Tensor<T>* grad_x, Tensor<T>* grad_w,
                     std::span<T> grad_b) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const std::size_t k = ws.h;
  const std::size_t oh = conv_out_size(xs.h, k, stride, pad);
  const std::size_t ow = conv_out_size(xs.w, k, stride, pad);
  const std::size_t p = oh * ow;
  const std::size_t kk = xs.c * k * k;
  if (grad_out.shape() != Shape{xs.n, ws.n, oh, ow}) throw ShapeError("conv2d_backward: grad_out shape");
  const bool pointwise = is_pointwise(k, stride, pad);

  if (!grad_b.empty()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t co = 0; co < static_cast<std::ptrdiff_t>(ws.n); ++co) {
      T acc = grad_b[static_cast<std::size_t>(co)];
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* g = grad_out.plane(b, static_cast<std::size_t>(co));
        for (std::size_t i = 0; i < p; ++i) acc += g[i];
      }
      grad_b[static_cast<std::size_t>(co)] = acc;
    }
  }

  std::vector<T> col(pointwise ? 0 : kk * p);
  std::vector<T> gt(grad_w ? p * ws.n : 0);
  std::vector<T> gw_t(grad_w ? kk * ws.n : 0);
  std::vector<T> wt(grad_x ? kk * ws.n : 0);
  std::vector<T> dcol(grad_x && !pointwise ? kk * p : 0);
  if (grad_x) transpose(weight.data(), ws.n, kk, wt.data());

  for (std::size_t b = 0; b < xs.n; ++b) {
    const T* g = grad_out.plane(b, 0);
    if (grad_w) {
      const T* src = x.plane(b, 0);
      if (!pointwise) {
        im2col(src, xs.c, xs.h, xs.w, k, stride, pad, oh, ow, col.data());
        src = col.data();
      }
      transpose(g, ws.n, p, gt.data());
      gemm(kk, ws.n, p, src, gt.data(), gw_t.data(), false);
      T* gw = grad_w->data();
      for (std::size_t co = 0; co < ws.n; ++co) {
        for (std::size_t j = 0; j < kk; ++j) gw[co * kk + j] += gw_t[j * ws.n + co];
      }
    }
    if (grad_x) {
      if (pointwise) {
        gemm(kk, p, ws.n, wt.data(), g, grad_x->plane(b, 0), true);
      } else {
        gemm(kk, p, ws.n, wt.data(), g, dcol.data(), false);
        col2im_add(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, oh, ow, grad_x->plane(b, 0));
      }
    }
  }
}

template <class T>
Tensor<T> upsample_forward(const Tensor<T>& x, std::size_t factor, Upsample mode) {
  if (factor == 0) throw ShapeError("upsample: factor must be >= 1");
  const Shape s = x.shape();
  if (factor == 1) return x;
  const std::size_t oh = s.h * factor, ow = s.w * factor;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  const auto planes = static_cast<std::ptrdiff_t>(s.n * s.c);
  if (mode == Upsample::kNearest) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
      const T* src = x.data() + static_cast<std::size_t>(pl) * s.plane();
      T* dst = out.data() + static_cast<std::size_t>(pl) * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const T* srow = src + (oy / factor) * s.w;
        for (std::size_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = srow[ox / factor];
      }
    }
    return out;
  }
  std::vector<Tap> ty(oh), tx(ow);
  for (std::size_t o = 0; o < oh; ++o) ty[o] = bilinear_tap(o, factor, s.h);
  for (std::size_t o = 0; o < ow; ++o) tx[o] = bilinear_tap(o, factor, s.w);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* src = x.data() + static_cast<std::size_t>(pl) * s.plane();
    T* dst = out.data() + static_cast<std::size_t>(pl) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const T fy = static_cast<T>(ty[oy].frac);
      const T* r0 = src + ty[oy].i0 * s.w;
      const T* r1 = src + ty[oy].i1 * s.w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T fx = static_cast<T>(tx[ox].frac);
        const T top = (T{1} - fx) * r0[tx[ox].i0] + fx * r0[tx[ox].i1];
        const T bot = (T{1} - fx) * r1[tx[ox].i0] + fx * r1[tx[ox].i1];
        dst[oy * ow + ox] = (T{1} - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

template <class T>
void upsample_backward(const Tensor<T>& grad_out, std::size_t factor, Upsample mode, Tensor<T>& grad_x) {
  const Shape s = grad_x.shape();
  const std::size_t oh = s.h * factor, ow = s.w * factor;
  if (grad_out.shape() != Shape{s.n, s.c, oh, ow}) throw ShapeError("upsample_backward: grad_out shape");
  const auto planes = static_cast<std::ptrdiff_t>(s.n * s.c);
  if (mode == Upsample::kNearest || factor == 1) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
      const T* g = grad_out.data() + static_cast<std::size_t>(pl) * oh * ow;
      T* dst = grad_x.data() + static_cast<std::size_t>(pl) * s.plane();
      for (std::size_t oy = 0; oy < oh; ++oy) {
        T* drow = dst + (oy / factor) * s.w;
        for (std::size_t ox = 0; ox < ow; ++ox) drow[ox / factor] += g[oy * ow + ox];
      }
    }
    return;
  }
  std::vector<Tap> ty(oh), tx(ow);
  for (std::size_t o = 0; o < oh; ++o) ty[o] = bilinear_tap(o, factor, s.h);
  for (std::size_t o = 0; o < ow; ++o) tx[o] = bilinear_tap(o, factor, s.w);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* g = grad_out.data() + static_cast<std::size_t>(pl) * oh * ow;
    T* dst = grad_x.data() + static_cast<std::size_t>(pl) * s.plane();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const T fy = static_cast<T>(ty[oy].frac);
      T* r0 = dst + ty[oy].i0 * s.w;
      T* r1 = dst + ty[oy].i1 * s.w;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const T fx = static_cast<T>(tx[ox].frac);
        const T v = g[oy * ow + ox];
        r0[tx[ox].i0] += (T{1} - fy) * (T{1} - fx) * v;
        r0[tx[ox].i1] += (T{1} - fy) * fx * v;
        r1[tx[ox].i0] += fy * (T{1} - fx) * v;
        r1[tx[ox].i1] += fy * fx * v;
      }
    }
  }
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  const std::size_t hw = s.plane();
  const auto pixels = static_cast<std::ptrdiff_t>(s.n * hw);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < pixels; ++q) {
    const std::size_t b = static_cast<std::size_t>(q) / hw;
    const std::size_t i = static_cast<std::size_t>(q) % hw;
    const T* src = x.plane(b, 0) + i;
    T* dst = out.plane(b, 0) + i;
    T mx = src[0];
    for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, src[c * hw]);
    T sum = 0;
    for (std::size_t c = 0; c < s.c; ++c) {
      const T e = std::exp(src[c * hw] - mx);
      dst[c * hw] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < s.c; ++c) dst[c * hw] /= sum;
  }
  return out;
}

template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor) {
  const Shape s = x.shape();
  if (factor == 0 || s.h % factor != 0 || s.w % factor != 0) {
    throw ShapeError("avg_pool: factor must divide spatial dims of " + s.str());
  }
  const std::size_t oh = s.h / factor, ow = s.w / factor;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  // Wide accumulator: pooling a constant window reproduces it exactly.
  const long double inv = 1.0L / static_cast<long double>(factor * factor);
  const auto planes = static_cast<std::ptrdiff_t>(s.n * s.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const T* src = x.data() + static_cast<std::size_t>(pl) * s.plane();
    T* dst = out.data() + static_cast<std::size_t>(pl) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        long double acc = 0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) acc += src[(oy * factor + dy) * s.w + ox * factor + dx];
        }
        dst[oy * ow + ox] = static_cast<T>(acc * inv);
      }
    }
  }
  return out;
}

#define CELLSEG_INSTANTIATE_KERNELS(T)                                                                  \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);          \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,         \
                                       std::size_t, std::size_t);                                     \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                   std::size_t, Tensor<T>*, Tensor<T>*, std::span<T>);                \
  template Tensor<T> upsample_forward<T>(const Tensor<T>&, std::size_t, Upsample);                     \
  template void upsample_backward<T>(const Tensor<T>&, std::size_t, Upsample, Tensor<T>&);             \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);                                            \
  template Tensor<T> avg_pool<T>(const Tensor<T>&, std::size_t);

CELLSEG_INSTANTIATE_KERNELS(float)
CELLSEG_INSTANTIATE_KERNELS(double)

}  // namespace kernels
}  // namespace cellseg
