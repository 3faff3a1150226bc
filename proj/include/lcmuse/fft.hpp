#pragma once

// Unitary 2-D DFT on the 2-channel complex encoding [2, H, W], built from
// Eigen's 1-D FFT (kissfft backend, any length).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "lcmuse/tensor.hpp"

namespace lcmuse {

/// Reusable unitary 2-D DFT for a fixed H x W grid.
template <class T>
class Dft2 {
 public:
  Dft2(std::size_t height, std::size_t width) : height_(height), width_(width) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

  Tensor<T> forward(const Tensor<T>& x) const { return run(x, false); }
  Tensor<T> inverse(const Tensor<T>& x) const { return run(x, true); }

 private:
  Tensor<T> run(const Tensor<T>& x, bool inverse) const {
    const std::size_t h = height(), w = width();
    if (x.rank() != 3 || x.dim(0) != 2) throw ShapeError("fft2: expected [2,H,W], got " + shape_string(x.shape()));
    if (x.dim(1) != h) throw ShapeError("fft2: axis 1 (height) mismatch");
    if (x.dim(2) != w) throw ShapeError("fft2: axis 2 (width) mismatch");
    const std::size_t hw = h * w;
    std::vector<std::complex<T>> buf(hw);
    for (std::size_t p = 0; p < hw; ++p) buf[p] = {x[p], x[hw + p]};
    // A local plan cache keeps run() const and safe to call concurrently.
    Eigen::FFT<T> fft;
    fft.SetFlag(Eigen::FFT<T>::Unscaled);
    std::vector<std::complex<T>> in(std::max(h, w)), res(std::max(h, w));
    auto pass = [&](std::complex<T>* data, std::size_t n, std::size_t stride) {
      for (std::size_t k = 0; k < n; ++k) in[k] = data[k * stride];
      if (inverse) {
        fft.inv(res.data(), in.data(), static_cast<Eigen::Index>(n));
      } else {
        fft.fwd(res.data(), in.data(), static_cast<Eigen::Index>(n));
      }
      for (std::size_t k = 0; k < n; ++k) data[k * stride] = res[k];
    };
    for (std::size_t i = 0; i < h; ++i) pass(buf.data() + i * w, w, 1);
    for (std::size_t j = 0; j < w; ++j) pass(buf.data() + j, h, w);
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hw)));
    Tensor<T> out(x.shape());
    for (std::size_t p = 0; p < hw; ++p) {
      out[p] = buf[p].real() * s;
      out[hw + p] = buf[p].imag() * s;
    }
    return out;
  }

  std::size_t height_;
  std::size_t width_;
};

template <class T>
Tensor<T> fft2(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("fft2: expected [2,H,W], got " + shape_string(x.shape()));
  return Dft2<T>(x.dim(1), x.dim(2)).forward(x);
}

template <class T>
Tensor<T> ifft2(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("ifft2: expected [2,H,W], got " + shape_string(x.shape()));
  return Dft2<T>(x.dim(1), x.dim(2)).inverse(x);
}

}  // namespace lcmuse
