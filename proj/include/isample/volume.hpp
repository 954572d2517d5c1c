#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace isample {

/// Spatial extent, slowest axis first. Rank 2 or 3.
using Dims = std::vector<int>;

/// Internal fixed-rank extent; 2D grids are stored with a leading axis of 1.
using Extent3 = std::array<int, 3>;

Extent3 to_extent3(const Dims& dims);
std::size_t voxel_count(const Dims& dims);
std::string dims_to_string(const Dims& dims);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scalar image on a regular grid. Immutable after construction.
class Volume {
 public:
  Volume() = default;
  Volume(Dims dims, std::vector<float> spacing, std::vector<float> voxels,
         std::string id = {});

  int rank() const { return static_cast<int>(dims_.size()); }
  const Dims& dims() const { return dims_; }
  Extent3 extent() const { return to_extent3(dims_); }
  const std::vector<float>& spacing() const { return spacing_; }
  std::span<const float> voxels() const { return voxels_; }
  std::size_t size() const { return voxels_.size(); }
  float operator[](std::size_t i) const { return voxels_[i]; }
  const std::string& id() const { return id_; }

  /// Value at (z, y, x) with coordinates clamped into the grid (edge replication).
  float at_clamped(int z, int y, int x) const;

 private:
  Dims dims_;
  std::vector<float> spacing_;
  std::vector<float> voxels_;
  std::string id_;
};

/// Integer class map aligned with a Volume. Class 0 is background.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Dims dims, std::vector<float> spacing, std::vector<std::uint16_t> labels,
           int num_classes);

  int rank() const { return static_cast<int>(dims_.size()); }
  const Dims& dims() const { return dims_; }
  Extent3 extent() const { return to_extent3(dims_); }
  const std::vector<float>& spacing() const { return spacing_; }
  std::span<const std::uint16_t> labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  std::uint16_t operator[](std::size_t i) const { return labels_[i]; }
  int num_classes() const { return num_classes_; }

  std::uint16_t at_clamped(int z, int y, int x) const;

 private:
  Dims dims_;
  std::vector<float> spacing_;
  std::vector<std::uint16_t> labels_;
  int num_classes_ = 2;
};

inline constexpr float kHounsfieldClamp = 1000.0f;
inline constexpr float kIntensityScale = 218.0f;

/// clamp(v, -1000, 1000) / 218 per voxel.
Volume clamp_normalize(const Volume& v);

enum class VoxelType : std::uint8_t { f32 = 0, u16 = 1 };

void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path, std::string id = {});
void save_labels(const LabelMap& l, const std::filesystem::path& path);
LabelMap load_labels(const std::filesystem::path& path, int num_classes);

}  // namespace isample
