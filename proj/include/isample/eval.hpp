#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isample/dualpath.hpp"
#include "isample/volume.hpp"

namespace isample::eval {

using Mask = std::vector<std::uint8_t>;

/// 2|A∩B| / (|A| + |B|); two empty masks score 1.
double dice(const Mask& a, const Mask& b);

/// Component id per voxel (0 = outside the mask, ids from 1 in raster order of
/// each component's first voxel). Face connectivity.
std::vector<int> label_components(const Mask& mask, const Extent3& extent, int* count = nullptr);

/// Keeps the largest face-connected component; ties go to the component whose
/// first voxel comes first in raster order.
Mask largest_component_filter(const Mask& mask, const Extent3& extent);

struct SegmentationResult {
  std::string image_id;
  std::string checkpoint_id;
  Dims dims;
  std::vector<std::uint16_t> labels;
  net::ProbabilityMap probabilities;  ///< kept only when requested
};

/// Argmax per voxel; ties go to the lowest class id.
std::vector<std::uint16_t> argmax_labels(const net::ProbabilityMap& probs);

/// Per foreground class, voxels outside that class's largest component go to background.
void filter_per_class(std::vector<std::uint16_t>& labels, const Dims& dims, int num_classes);

SegmentationResult segment(net::DualPathNet<float>& model, const Volume& image, bool post_filter,
                           bool keep_probabilities = false);

Mask class_mask(std::span<const std::uint16_t> labels, int k);

struct DiceRow {
  std::string image;
  int cls = 0;
  double dice = 0.0;
  std::size_t predicted = 0;
  std::size_t truth = 0;
};

struct DiceReport {
  std::vector<DiceRow> rows;  ///< one per (image, foreground class)
  int num_classes = 2;

  /// Mean over images per foreground class (index = class id; entry 0 unused).
  std::vector<double> class_mean() const;
  std::vector<double> class_stddev() const;
  /// Mean over foreground classes of class_mean().
  double mean() const;
  void write_csv(const std::filesystem::path& path) const;
};

void add_to_report(DiceReport& report, const std::string& image, std::span<const std::uint16_t> predicted,
                   const LabelMap& truth);

/// 8-bit binary PGM of one slice: pixel = round-half-up(255·E). 2D maps ignore the slice.
void export_error_map(const std::vector<float>& values, const Dims& dims, const std::filesystem::path& path,
                      int axis = 0, int index = 0);

std::uint8_t error_to_pixel(float e);

}  // namespace isample::eval
