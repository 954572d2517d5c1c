#include "isample/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace isample::nn {

std::string extent_to_string(const Extent3& e) {
  std::ostringstream os;
  os << e[0] << "x" << e[1] << "x" << e[2];
  return os.str();
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, const Extent3& offset, const Extent3& extent) {
  for (int a = 0; a < 3; ++a)
    if (offset[a] < 0 || offset[a] + extent[a] > x.sp[a])
      throw ShapeError("crop of " + extent_to_string(extent) + " at " + extent_to_string(offset) +
                       " exceeds extent " + extent_to_string(x.sp) + " on axis " + std::to_string(a));
  Tensor<T> out(x.n, x.c, extent);
  for (int b = 0; b < x.n; ++b)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* src = x.channel(b, ch);
      T* dst = out.channel(b, ch);
      for (int z = 0; z < extent[0]; ++z)
        for (int y = 0; y < extent[1]; ++y) {
          const T* row = src + (std::size_t(z + offset[0]) * x.sp[1] + (y + offset[1])) * x.sp[2] + offset[2];
          std::copy(row, row + extent[2], dst);
          dst += extent[2];
        }
    }
  return out;
}

template <typename T>
Tensor<T> uncrop(const Tensor<T>& g, const Extent3& offset, const Extent3& full) {
  Tensor<T> out(g.n, g.c, full);
  for (int b = 0; b < g.n; ++b)
    for (int ch = 0; ch < g.c; ++ch) {
      const T* src = g.channel(b, ch);
      T* dst = out.channel(b, ch);
      for (int z = 0; z < g.sp[0]; ++z)
        for (int y = 0; y < g.sp[1]; ++y) {
          T* row = dst + (std::size_t(z + offset[0]) * full[1] + (y + offset[1])) * full[2] + offset[2];
          std::copy(src, src + g.sp[2], row);
          src += g.sp[2];
        }
    }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.sp != b.sp)
    throw ShapeError("concat of " + extent_to_string(a.sp) + " and " + extent_to_string(b.sp));
  Tensor<T> out(a.n, a.c + b.c, a.sp);
  const std::size_t pa = a.plane() * a.c, pb = b.plane() * b.c;
  for (int s = 0; s < a.n; ++s) {
    std::copy_n(a.data.data() + s * pa, pa, out.data.data() + s * (pa + pb));
    std::copy_n(b.data.data() + s * pb, pb, out.data.data() + s * (pa + pb) + pa);
  }
  return out;
}

template Tensor<float> crop(const Tensor<float>&, const Extent3&, const Extent3&);
template Tensor<double> crop(const Tensor<double>&, const Extent3&, const Extent3&);
template Tensor<float> uncrop(const Tensor<float>&, const Extent3&, const Extent3&);
template Tensor<double> uncrop(const Tensor<double>&, const Extent3&, const Extent3&);
template Tensor<float> concat_channels(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> concat_channels(const Tensor<double>&, const Tensor<double>&);

}  // namespace isample::nn
