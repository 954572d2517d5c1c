#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "isample/volume.hpp"

namespace isample::nn {

enum class Mode { train, infer };

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense (batch, channel, z, y, x) block. 2D data keeps z = 1.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  Extent3 sp{1, 1, 1};
  std::vector<T> data;

  Tensor() = default;
  Tensor(int batch, int channels, Extent3 spatial, T fill = T(0))
      : n(batch), c(channels), sp(spatial), data(std::size_t(batch) * channels * plane_of(spatial), fill) {}

  static std::size_t plane_of(const Extent3& e) { return std::size_t(e[0]) * e[1] * e[2]; }
  std::size_t plane() const { return plane_of(sp); }
  std::size_t size() const { return data.size(); }

  T* channel(int b, int ch) { return data.data() + (std::size_t(b) * c + ch) * plane(); }
  const T* channel(int b, int ch) const { return data.data() + (std::size_t(b) * c + ch) * plane(); }

  T& at(int b, int ch, int z, int y, int x) {
    return data[((std::size_t(b) * c + ch) * sp[0] + z) * sp[1] * sp[2] + std::size_t(y) * sp[2] + x];
  }
  T at(int b, int ch, int z, int y, int x) const {
    return data[((std::size_t(b) * c + ch) * sp[0] + z) * sp[1] * sp[2] + std::size_t(y) * sp[2] + x];
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && sp == o.sp; }

  void require_finite(const std::string& where) const {
    for (const T& v : data)
      if (!std::isfinite(v)) throw NumericError("non-finite value in " + where);
  }
};

std::string extent_to_string(const Extent3& e);

/// Copies the block [offset, offset + extent) out of x.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, const Extent3& offset, const Extent3& extent);

/// Adjoint of crop: g placed at offset inside a zero tensor of extent `full`.
template <typename T>
Tensor<T> uncrop(const Tensor<T>& g, const Extent3& offset, const Extent3& full);

/// Channel-wise concatenation of a and b (same batch and extent).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace isample::nn
