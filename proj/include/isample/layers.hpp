#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "isample/rng.hpp"
#include "isample/tensor.hpp"

namespace isample::nn {

/// A named parameter tensor. Non-trainable entries hold batchnorm running statistics.
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool decay = false;
  bool trainable = true;

  Param(std::string n, std::vector<int> s, bool decays, bool train = true);
  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

/// Number of trainable scalars.
template <typename T>
std::size_t param_count(const ParamList<T>& params);

enum class LayerKind { conv, batchnorm, relu, dropout, resblock_standard, resblock_bottleneck, fc, softmax };

std::string to_string(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  Extent3 kernel{1, 1, 1};
  int in = 1;
  int out = 1;
  int stride = 1;
  double dropout = 0.0;

  void validate() const;
  std::string describe() const;
};

/// Receptive field per axis in original-resolution voxels. The chain runs on a
/// path downsampled by `downsample` (1 = full resolution).
Extent3 receptive_field(const std::vector<LayerSpec>& chain, const Extent3& downsample);

struct ConvShape {
  int in = 1;
  int out = 1;
  Extent3 kernel{1, 3, 3};
  int stride = 1;

  std::size_t kernel_volume() const { return std::size_t(kernel[0]) * kernel[1] * kernel[2]; }
  Extent3 output_extent(const Extent3& in_extent) const;
};

/// VALID cross-correlation. w is [out][in][kz][ky][kx]; b may be empty.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, std::span<const T> w, std::span<const T> b,
                       const ConvShape& s);

template <typename T>
struct ConvGradients {
  Tensor<T> x;
  std::vector<T> w;
  std::vector<T> b;
};

template <typename T>
ConvGradients<T> conv_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                               std::span<const T> w, const ConvShape& s);

/// Uniform Glorot values on [-a, a], a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
std::vector<T> glorot_init(std::size_t count, std::size_t fan_in, std::size_t fan_out, Rng& rng);

double glorot_limit(std::size_t fan_in, std::size_t fan_out);

struct CrossEntropy {
  double loss = 0.0;
  int voxels = 0;
};

/// Mean −log p(target) over every voxel of the batch. grad gets (p − onehot)/voxels.
template <typename T>
CrossEntropy softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> targets,
                                   Tensor<T>* grad);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// Inverted dropout. Returns the output; `mask` receives the per-element scale.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, Rng& rng, std::vector<T>* mask = nullptr);

// ---------------------------------------------------------------------------

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect(ParamList<T>& out) { (void)out; }
  virtual Extent3 output_extent(const Extent3& in) const { return in; }
  virtual int output_channels(int in) const { return in; }
  /// Appends the spatial chain this layer contributes (for receptive fields and headers).
  virtual void describe(std::vector<LayerSpec>& out) const = 0;
};

template <typename T>
class Conv : public Layer<T> {
 public:
  Conv(const std::string& name, ConvShape shape, bool decay, Rng& init_rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(ParamList<T>& out) override;
  Extent3 output_extent(const Extent3& in) const override { return shape_.output_extent(in); }
  int output_channels(int) const override { return shape_.out; }
  void describe(std::vector<LayerSpec>& out) const override;

  Param<T>& weights() { return w_; }
  Param<T>& bias() { return b_; }
  const ConvShape& shape() const { return shape_; }

 private:
  ConvShape shape_;
  Param<T> w_;
  Param<T> b_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm : public Layer<T> {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm(const std::string& name, int channels, T initial_scale = T(1));

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(ParamList<T>& out) override;
  void describe(std::vector<LayerSpec>& out) const override;

  Param<T>& scale() { return scale_; }
  Param<T>& shift() { return shift_; }
  Param<T>& running_mean() { return mean_; }
  Param<T>& running_var() { return var_; }
  bool has_statistics() const { return updates_.value[0] > T(0); }

 private:
  int channels_;
  Param<T> scale_, shift_, mean_, var_, updates_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void describe(std::vector<LayerSpec>&) const override {}

 private:
  Tensor<T> output_;
};

template <typename T>
class Dropout : public Layer<T> {
 public:
  Dropout(double p, Rng* rng);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void describe(std::vector<LayerSpec>&) const override {}
  double probability() const { return p_; }

 private:
  double p_;
  Rng* rng_;
  std::vector<T> mask_;
  bool active_ = false;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(ParamList<T>& out) override;
  Extent3 output_extent(const Extent3& in) const override;
  int output_channels(int in) const override;
  void describe(std::vector<LayerSpec>& out) const override;
  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// conv → batchnorm → relu.
template <typename T>
std::unique_ptr<Sequential<T>> make_conv_block(const std::string& name, ConvShape shape, Rng& rng);

enum class ResidualKind { standard, bottleneck };

/// Residual block with VALID convolutions; the shortcut is centre-cropped and,
/// when channel counts differ, projected by a 1x1 convolution. The last batchnorm
/// of the branch starts at scale 0 so a fresh block is the shortcut map.
template <typename T>
class ResBlock : public Layer<T> {
 public:
  static constexpr int kBottleneckReduction = 4;

  ResBlock(const std::string& name, ResidualKind kind, int in, int out, Extent3 kernel, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect(ParamList<T>& out) override;
  Extent3 output_extent(const Extent3& in) const override;
  int output_channels(int) const override { return out_; }
  void describe(std::vector<LayerSpec>& out) const override;

  Sequential<T>& branch() { return branch_; }
  Conv<T>* projection() { return projection_.get(); }
  BatchNorm<T>& final_norm() { return *final_norm_; }

 private:
  ResidualKind kind_;
  int in_, out_;
  Extent3 kernel_;
  Extent3 shrink_{0, 0, 0};  ///< per-side crop of the shortcut
  Sequential<T> branch_;
  BatchNorm<T>* final_norm_ = nullptr;
  std::unique_ptr<Conv<T>> projection_;
  Extent3 input_extent_{1, 1, 1};
  Tensor<T> output_;
};

}  // namespace isample::nn
