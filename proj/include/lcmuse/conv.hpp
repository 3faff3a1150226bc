#pragma once

// Same-size 2-D cross-correlation and its two adjoints, via im2col + GEMM.
//
// With y[o, p] = sum_{i, s} K[o, i, s] x[i, p + s] (zero padded), the three
// kernels below are the partial derivatives of the trilinear form
// <K * x, g>:
//   conv2d                : d/dg  -> y          [C_out, H, W]
//   conv2d_input_grad     : d/dx  -> K^T g     [C_in, H, W]
//   conv2d_kernel_grad    : d/dK  -> g x^T     [C_out, C_in, k, k]

#include <Eigen/Core>
#include <string>
#include <vector>

#include "lcmuse/tensor.hpp"

namespace lcmuse {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// cols[(c * k + a) * k + b, i * W + j] = x[c, i + a - r, j + b - r]
template <class T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t k, T* cols) {
  const long r = static_cast<long>(k / 2);
  const long H = static_cast<long>(height);
  const long W = static_cast<long>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * height * width;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        T* row = cols + ((c * k + a) * k + b) * height * width;
        const long da = static_cast<long>(a) - r;
        const long db = static_cast<long>(b) - r;
        for (long i = 0; i < H; ++i) {
          const long si = i + da;
          T* out = row + i * W;
          if (si < 0 || si >= H) {
            std::fill(out, out + W, T(0));
            continue;
          }
          const T* src = plane + si * W;
          for (long j = 0; j < W; ++j) {
            const long sj = j + db;
            out[j] = (sj >= 0 && sj < W) ? src[sj] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into the image.
template <class T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t k, T* x) {
  const long r = static_cast<long>(k / 2);
  const long H = static_cast<long>(height);
  const long W = static_cast<long>(width);
  std::fill(x, x + channels * height * width, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * height * width;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        const T* row = cols + ((c * k + a) * k + b) * height * width;
        const long da = static_cast<long>(a) - r;
        const long db = static_cast<long>(b) - r;
        for (long i = 0; i < H; ++i) {
          const long si = i + da;
          if (si < 0 || si >= H) continue;
          const T* in = row + i * W;
          T* dst = plane + si * W;
          const long j0 = std::max<long>(0, -db);
          const long j1 = std::min<long>(W, W - db);
          for (long j = j0; j < j1; ++j) dst[j + db] += in[j];
        }
      }
    }
  }
}

inline void check_conv_shapes(const Shape& input, const Shape& kernels, const char* op) {
  if (input.size() != 3) throw ShapeError(std::string(op) + ": input must be [C,H,W], got " + shape_string(input));
  if (kernels.size() != 4) {
    throw ShapeError(std::string(op) + ": kernels must be [C_out,C_in,k,k], got " + shape_string(kernels));
  }
  if (kernels[2] != kernels[3]) throw ShapeError(std::string(op) + ": axis 3 (kernel width) differs from axis 2");
  if (kernels[2] % 2 == 0) throw ShapeError(std::string(op) + ": axis 2 (kernel size) must be odd");
}

}  // namespace detail

/// Zero-padded cross-correlation preserving H, W. `bias` may be empty.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias = {}) {
  detail::check_conv_shapes(input.shape(), kernels.shape(), "conv2d");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != c_in) {
    throw ShapeError("conv2d: axis 1 of kernels (input channels) is " + std::to_string(kernels.dim(1)) +
                     " but input has " + std::to_string(c_in) + " channels");
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    throw ShapeError("conv2d: axis 0 of bias must match output channels " + std::to_string(c_out));
  }
  const std::size_t hw = h * w;
  std::vector<T> cols(c_in * k * k * hw);
  detail::im2col(input.data(), c_in, h, w, k, cols.data());
  Tensor<T> out(Shape{c_out, h, w});
  detail::MatMap<T> y(out.data(), c_out, hw);
  y.noalias() = detail::ConstMatMap<T>(kernels.data(), c_out, c_in * k * k) *
                detail::ConstMatMap<T>(cols.data(), c_in * k * k, hw);
  if (!bias.empty()) {
    for (std::size_t o = 0; o < c_out; ++o) y.row(o).array() += bias[o];
  }
  return out;
}

/// Vector-Jacobian product of conv2d with respect to its input (transposed convolution).
template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& grad_out, const Tensor<T>& kernels) {
  detail::check_conv_shapes(grad_out.shape(), kernels.shape(), "conv2d_input_grad");
  const std::size_t c_out = grad_out.dim(0), h = grad_out.dim(1), w = grad_out.dim(2);
  if (kernels.dim(0) != c_out) {
    throw ShapeError("conv2d_input_grad: axis 0 of kernels (output channels) is " + std::to_string(kernels.dim(0)) +
                     " but gradient has " + std::to_string(c_out) + " channels");
  }
  const std::size_t c_in = kernels.dim(1), k = kernels.dim(2), hw = h * w;
  std::vector<T> cols(c_in * k * k * hw);
  detail::MatMap<T> cm(cols.data(), c_in * k * k, hw);
  cm.noalias() = detail::ConstMatMap<T>(kernels.data(), c_out, c_in * k * k).transpose() *
                 detail::ConstMatMap<T>(grad_out.data(), c_out, hw);
  Tensor<T> out(Shape{c_in, h, w});
  detail::col2im(cols.data(), c_in, h, w, k, out.data());
  return out;
}

/// Vector-Jacobian product of conv2d with respect to its kernels.
template <class T>
Tensor<T> conv2d_kernel_grad(const Tensor<T>& input, const Tensor<T>& grad_out, std::size_t k) {
  if (input.rank() != 3 || grad_out.rank() != 3) throw ShapeError("conv2d_kernel_grad: tensors must be [C,H,W]");
  if (input.dim(1) != grad_out.dim(1)) throw ShapeError("conv2d_kernel_grad: axis 1 (height) mismatch");
  if (input.dim(2) != grad_out.dim(2)) throw ShapeError("conv2d_kernel_grad: axis 2 (width) mismatch");
  if (k % 2 == 0) throw ShapeError("conv2d_kernel_grad: kernel size must be odd");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2), c_out = grad_out.dim(0);
  const std::size_t hw = h * w;
  std::vector<T> cols(c_in * k * k * hw);
  detail::im2col(input.data(), c_in, h, w, k, cols.data());
  Tensor<T> out(Shape{c_out, c_in, k, k});
  detail::MatMap<T> dk(out.data(), c_out, c_in * k * k);
  dk.noalias() = detail::ConstMatMap<T>(grad_out.data(), c_out, hw) *
                 detail::ConstMatMap<T>(cols.data(), c_in * k * k, hw).transpose();
  return out;
}

/// Sum over the spatial axes of a [C,H,W] tensor.
template <class T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("channel_sum: expected [C,H,W], got " + shape_string(x.shape()));
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out(Shape{c});
  for (std::size_t i = 0; i < c; ++i) {
    T acc = 0;
    for (std::size_t p = 0; p < hw; ++p) acc += x[i * hw + p];
    out[i] = acc;
  }
  return out;
}

/// Replicates a per-channel vector over an H x W grid.
template <class T>
Tensor<T> broadcast_channels(const Tensor<T>& v, std::size_t h, std::size_t w) {
  if (v.rank() != 1) throw ShapeError("broadcast_channels: expected a vector, got " + shape_string(v.shape()));
  Tensor<T> out(Shape{v.dim(0), h, w});
  for (std::size_t i = 0; i < v.dim(0); ++i) std::fill(out.data() + i * h * w, out.data() + (i + 1) * h * w, v[i]);
  return out;
}

}  // namespace lcmuse
