#pragma once

// Compute kernels behind the differentiable ops.
//
// Two implementations live side by side:
//   cellseg::kernels             OpenMP-parallel, im2col + register-blocked GEMM
//   cellseg::kernels::reference  plain serial loops, kept as the test oracle
//
// Every parallel kernel splits work over disjoint output elements only, and each
// output element is reduced serially in a fixed order, so results do not depend
// on the thread count.

#include <cstddef>
#include <span>

#include "cellseg/tensor.hpp"

namespace cellseg::kernels {

enum class Upsample { kNearest, kBilinear };

constexpr std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// C[M x N] = A[M x K] * B[K x N] (row-major), or C += A * B when accumulate.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// weight (c_out, c_in, k, k); bias has c_out entries (may be empty for no bias).
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias,
                         std::size_t stride, std::size_t pad);

// Accumulates into whichever gradient pointers are non-null.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     std::size_t stride, std::size_t pad, Tensor<T>* grad_x, Tensor<T>* grad_w,
                     std::span<T> grad_b);

template <class T>
Tensor<T> upsample_forward(const Tensor<T>& x, std::size_t factor, Upsample mode);

// Accumulates the adjoint of upsample_forward into grad_x.
template <class T>
void upsample_backward(const Tensor<T>& grad_out, std::size_t factor, Upsample mode, Tensor<T>& grad_x);

// Softmax along the channel axis at every pixel.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x);

// Non-overlapping average pooling with window = stride = factor.
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor);

namespace reference {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& weight, std::span<const T> bias,
                         std::size_t stride, std::size_t pad);

template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     std::size_t stride, std::size_t pad, Tensor<T>* grad_x, Tensor<T>* grad_w,
                     std::span<T> grad_b);

template <class T>
Tensor<T> upsample_forward(const Tensor<T>& x, std::size_t factor, Upsample mode);

template <class T>
void upsample_backward(const Tensor<T>& grad_out, std::size_t factor, Upsample mode, Tensor<T>& grad_x);

template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x);

}  // namespace reference

// Checks shared by both implementations; throws ShapeError.
void check_conv_shapes(const Shape& x, const Shape& weight, std::size_t bias_len, std::size_t stride,
                       std::size_t pad);

}  // namespace cellseg::kernels
