#pragma once

// Model fixtures shared by the unit and acceptance tests.

#include <string>
#include <vector>

#include "isample/dualpath.hpp"

namespace fixture {

using namespace isample;
using namespace isample::net;

template <typename T>
inline void random_inputs(const Geometry& g, int n, Rng& rng, Tensor<T>& hr, Tensor<T>& lr) {
  hr = Tensor<T>(n, 1, g.hr_input);
  lr = Tensor<T>(n, 1, g.lr_input);
  for (auto& v : hr.data) v = T(rng.uniform(-2, 2));
  for (auto& v : lr.data) v = T(rng.uniform(-2, 2));
}

template <typename T>
inline void randomize_parameters(DualPathNet<T>& m, Rng& rng) {
  for (auto* p : m.parameters())
    if (p->trainable)
      for (auto& v : p->value) v = T(rng.uniform(-0.8, 0.8));
}

/// Keeps the Glorot weights; gives every batchnorm and bias a non-trivial value.
template <typename T>
inline void perturb_parameters(DualPathNet<T>& m, Rng& rng) {
  auto ends_with = [](const std::string& s, const std::string& t) {
    return s.size() >= t.size() && s.compare(s.size() - t.size(), t.size(), t) == 0;
  };
  for (auto* p : m.parameters()) {
    if (ends_with(p->name, ".scale"))
      for (auto& v : p->value) v = T(rng.uniform(0.5, 1.5));
    else if (ends_with(p->name, ".shift") || ends_with(p->name, ".b"))
      for (auto& v : p->value) v = T(rng.uniform(-0.1, 0.1));
  }
}

inline Volume random_image(const Dims& dims, Rng& rng) {
  std::vector<float> v(voxel_count(dims));
  for (auto& x : v) x = float(rng.uniform(-3, 3));
  return Volume(dims, std::vector<float>(dims.size(), 1.0f), v);
}

/// Probabilities for one output block at `origin`, computed from a single forward pass.
inline ProbabilityMap single_window(DualPathNet<float>& m, const Volume& image, const Extent3& block) {
  const Geometry g = m.geometry_for(block);
  Tensor<float> hr(1, 1, g.hr_input), lr(1, 1, g.lr_input);
  fill_inputs(image, g, {0, 0, 0}, hr.data.data(), lr.data.data());
  auto p = m.forward(hr, lr, Mode::infer);
  const int K = m.config().num_classes;
  const Extent3 e = image.extent();
  ProbabilityMap out{image.dims(), K, std::vector<float>(image.size() * K)};
  for (int z = 0; z < e[0]; ++z)
    for (int y = 0; y < e[1]; ++y)
      for (int x = 0; x < e[2]; ++x)
        for (int k = 0; k < K; ++k)
          out.probs[((std::size_t(z) * e[1] + y) * e[2] + x) * K + k] = p.at(0, k, z, y, x);
  return out;
}

}  // namespace fixture
