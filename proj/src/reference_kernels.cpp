// Serial reference kernels. Straight loops, no blocking, no OpenMP; these are
// the oracle the parallel kernels are tested and benchmarked against.

#include <algorithm>
#include <cmath>

#include "cellseg/kernels.hpp"

namespace cellseg::kernels::reference {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
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
  Tensor<T> out(Shape{xs.n, ws.n, oh, ow});
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          T acc = bias.empty() ? T{0} : bias[co];
          for (std::size_t ci = 0; ci < xs.c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h) ||
                    ix >= static_cast<std::ptrdiff_t>(xs.w)) {
                  continue;
                }
                acc += weight.at(co, ci, ky, kx) *
                       x.at(b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          out.at(b, co, oy, ox) = acc;
        }
      }
    }
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
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const T g = grad_out.at(b, co, oy, ox);
          if (!grad_b.empty()) grad_b[co] += g;
          for (std::size_t ci = 0; ci < xs.c; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h) ||
                    ix >= static_cast<std::ptrdiff_t>(xs.w)) {
                  continue;
                }
                const auto uy = static_cast<std::size_t>(iy);
                const auto ux = static_cast<std::size_t>(ix);
                if (grad_w) grad_w->at(co, ci, ky, kx) += g * x.at(b, ci, uy, ux);
                if (grad_x) grad_x->at(b, ci, uy, ux) += g * weight.at(co, ci, ky, kx);
              }
            }
          }
        }
      }
    }
  }
}

namespace {

// Interpolation weights of output index o along an axis of length `in`.
void bilinear_weights(std::size_t o, std::size_t factor, std::size_t in, std::size_t& i0, std::size_t& i1,
                      double& frac) {
  double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
  src = std::max(src, 0.0);
  i0 = std::min(static_cast<std::size_t>(src), in - 1);
  i1 = std::min(i0 + 1, in - 1);
  frac = src - static_cast<double>(i0);
}

}  // namespace

template <class T>
Tensor<T> upsample_forward(const Tensor<T>& x, std::size_t factor, Upsample mode) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < s.h * factor; ++oy) {
        for (std::size_t ox = 0; ox < s.w * factor; ++ox) {
          if (mode == Upsample::kNearest || factor == 1) {
            out.at(b, c, oy, ox) = x.at(b, c, oy / factor, ox / factor);
            continue;
          }
          std::size_t y0, y1, x0, x1;
          double fy, fx;
          bilinear_weights(oy, factor, s.h, y0, y1, fy);
          bilinear_weights(ox, factor, s.w, x0, x1, fx);
          const T ty = static_cast<T>(fy), tx = static_cast<T>(fx);
          const T top = (T{1} - tx) * x.at(b, c, y0, x0) + tx * x.at(b, c, y0, x1);
          const T bot = (T{1} - tx) * x.at(b, c, y1, x0) + tx * x.at(b, c, y1, x1);
          out.at(b, c, oy, ox) = (T{1} - ty) * top + ty * bot;
        }
      }
    }
  }
  return out;
}

template <class T>
void upsample_backward(const Tensor<T>& grad_out, std::size_t factor, Upsample mode, Tensor<T>& grad_x) {
  const Shape s = grad_x.shape();
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < s.h * factor; ++oy) {
        for (std::size_t ox = 0; ox < s.w * factor; ++ox) {
          const T g = grad_out.at(b, c, oy, ox);
          if (mode == Upsample::kNearest || factor == 1) {
            grad_x.at(b, c, oy / factor, ox / factor) += g;
            continue;
          }
          std::size_t y0, y1, x0, x1;
          double fy, fx;
          bilinear_weights(oy, factor, s.h, y0, y1, fy);
          bilinear_weights(ox, factor, s.w, x0, x1, fx);
          const T ty = static_cast<T>(fy), tx = static_cast<T>(fx);
          grad_x.at(b, c, y0, x0) += (T{1} - ty) * (T{1} - tx) * g;
          grad_x.at(b, c, y0, x1) += (T{1} - ty) * tx * g;
          grad_x.at(b, c, y1, x0) += ty * (T{1} - tx) * g;
          grad_x.at(b, c, y1, x1) += ty * tx * g;
        }
      }
    }
  }
}

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t xx = 0; xx < s.w; ++xx) {
        T mx = x.at(b, 0, y, xx);
        for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, x.at(b, c, y, xx));
        T sum = 0;
        for (std::size_t c = 0; c < s.c; ++c) sum += std::exp(x.at(b, c, y, xx) - mx);
        for (std::size_t c = 0; c < s.c; ++c) out.at(b, c, y, xx) = std::exp(x.at(b, c, y, xx) - mx) / sum;
      }
    }
  }
  return out;
}

#define CELLSEG_INSTANTIATE_REFERENCE(T)                                                                \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);          \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,         \
                                       std::size_t, std::size_t);                                     \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                   std::size_t, Tensor<T>*, Tensor<T>*, std::span<T>);                \
  template Tensor<T> upsample_forward<T>(const Tensor<T>&, std::size_t, Upsample);                     \
  template void upsample_backward<T>(const Tensor<T>&, std::size_t, Upsample, Tensor<T>&);             \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);

CELLSEG_INSTANTIATE_REFERENCE(float)
CELLSEG_INSTANTIATE_REFERENCE(double)

}  // namespace cellseg::kernels::reference
