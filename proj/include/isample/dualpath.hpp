#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "isample/keyvalue.hpp"
#include "isample/layers.hpp"
#include "isample/volume.hpp"

namespace isample::net {

using nn::Mode;
using nn::Tensor;

struct BlockSpec {
  nn::ResidualKind kind = nn::ResidualKind::standard;
  int width = 16;
};

/// Architecture of the two-pathway network. Extents are per spatial axis of `rank`.
struct DualPathConfig {
  int rank = 2;
  int kernel = 3;
  int hr_stem = 8;
  std::vector<BlockSpec> hr_blocks{{nn::ResidualKind::standard, 16}, {nn::ResidualKind::standard, 16}};
  int lr_stem = 8;
  std::vector<BlockSpec> lr_blocks{{nn::ResidualKind::standard, 16},
                                   {nn::ResidualKind::standard, 16},
                                   {nn::ResidualKind::standard, 32}};
  int factor = 4;                ///< low-res downsample factor
  Dims hr_patch{22, 22};         ///< high-res input extent, voxels
  Dims lr_patch{17, 17};         ///< low-res input extent, low-res voxels
  std::vector<int> head_widths{64, 64};
  double dropout = 0.5;
  int num_classes = 2;
  int inference_block = 64;      ///< output tile extent for full-image inference (0: training block)

  void validate() const;
  KeyValues to_keyvalues() const;
  std::string text() const;
  static DualPathConfig from_keyvalues(const KeyValues& kv);
  static DualPathConfig read(const std::filesystem::path& path);

  /// CPU-trainable 2D default.
  static DualPathConfig desk2d();
  /// Larger 3D variant with bottleneck blocks and a deeper low-res path.
  static DualPathConfig paper3d();
  /// Smallest closing geometry, for gradient checks.
  static DualPathConfig tiny(int rank);
};

/// Placement of both input windows relative to the output block. All offsets are
/// in original-resolution voxels, relative to the output block's origin.
struct Geometry {
  Extent3 output{1, 1, 1};
  Extent3 hr_input{1, 1, 1};
  Extent3 lr_input{1, 1, 1};    ///< low-res voxels
  Extent3 lr_feature{1, 1, 1};  ///< low-res voxels
  Extent3 factor{1, 1, 1};
  Extent3 crop{0, 0, 0};        ///< per-side crop of the upsampled low-res features
  Extent3 hr_margin{0, 0, 0};   ///< per-side shrink of the high-res path
  Extent3 lr_margin{0, 0, 0};   ///< per-side shrink of the low-res path, low-res voxels

  Extent3 hr_offset() const;
  Extent3 lr_offset() const;
  Extent3 lr_context() const;  ///< low-res window in original voxels
};

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Two-pathway segmentation network: a full-resolution path and a path on
/// factor-downsampled context, fused by channel concatenation after
/// nearest-neighbour upsampling, followed by 1x1 (fully connected) layers.
template <typename T>
class DualPathNet {
 public:
  DualPathNet(const DualPathConfig& cfg, std::uint64_t seed);

  const DualPathConfig& config() const { return cfg_; }
  const Geometry& geometry() const { return geometry_; }
  /// Geometry producing an output block of extent `output` (must differ from the
  /// training block by a multiple of the factor).
  Geometry geometry_for(const Extent3& output) const;

  /// Class logits over the output block. hr is [N,1,hr_input], lr is [N,1,lr_input].
  Tensor<T> logits(const Tensor<T>& hr, const Tensor<T>& lr, Mode mode);
  Tensor<T> forward(const Tensor<T>& hr, const Tensor<T>& lr, Mode mode);
  /// Back-propagates dL/dlogits of the last training-mode call; gradients accumulate.
  void backward(const Tensor<T>& grad_logits);

  nn::ParamList<T> parameters();
  void zero_grad();
  std::size_t parameter_count();
  nn::Param<T>* find(const std::string& name);

  std::vector<nn::LayerSpec> hr_chain() const;
  std::vector<nn::LayerSpec> lr_chain() const;
  nn::LayerSpec classifier_spec() const;
  Extent3 hr_receptive_field() const;
  Extent3 lr_receptive_field() const;
  /// Header text written into checkpoints (config plus layer chain).
  std::string architecture_text() const;

  /// Stream used by dropout layers.
  Rng& dropout_rng() { return dropout_rng_; }

  /// Fresh network with identical configuration and parameter values.
  std::unique_ptr<DualPathNet> clone() const;
  void copy_parameters_from(const DualPathNet& other);

 private:
  DualPathConfig cfg_;
  Geometry geometry_;
  Rng dropout_rng_;
  nn::Sequential<T> hr_path_, lr_path_, head_;
  nn::Conv<T>* classifier_ = nullptr;
  int hr_channels_ = 0, lr_channels_ = 0;
  Extent3 lr_feature_extent_{1, 1, 1};
  Extent3 crop_{0, 0, 0};
};

/// Nearest-neighbour upsample by `factor` followed by a crop at `offset`.
template <typename T>
Tensor<T> upsample_crop(const Tensor<T>& x, const Extent3& factor, const Extent3& offset,
                        const Extent3& extent);
/// Adjoint of upsample_crop.
template <typename T>
Tensor<T> upsample_crop_backward(const Tensor<T>& g, const Extent3& factor, const Extent3& offset,
                                 const Extent3& source);

/// Writes the network inputs for an output block at `origin` (original voxels),
/// reading the image with edge replication. hr and lr are sized per geometry.
template <typename T>
void fill_inputs(const Volume& image, const Geometry& g, const Extent3& origin, T* hr, T* lr);

/// Per-voxel class probabilities, voxel-major: probs[i * K + k].
struct ProbabilityMap {
  Dims dims;
  int num_classes = 2;
  std::vector<float> probs;

  float at(std::size_t voxel, int k) const { return probs[voxel * num_classes + k]; }
  std::size_t voxels() const { return voxel_count(dims); }
};

/// Sliding-window fully convolutional inference, stride = tile output extent.
/// `block` overrides the configured inference tile (0 = use config).
template <typename T>
ProbabilityMap full_image_inference(DualPathNet<T>& model, const Volume& image, int block = 0);

void save_checkpoint(DualPathNet<float>& model, const std::filesystem::path& path);
/// Rejects files whose architecture header or tensor layout differs from `model`.
void load_checkpoint(DualPathNet<float>& model, const std::filesystem::path& path);
/// Reads only the architecture config stored in a checkpoint.
DualPathConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace isample::net
