#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "isample/keyvalue.hpp"
#include "isample/volume.hpp"

namespace isample {

/// One foreground class of the synthetic generator.
struct ForegroundClass {
  int min_blobs = 1;
  int max_blobs = 1;
  double fraction = 0.003;        ///< target share of all voxels carrying this label
  double intensity = 200.0;       ///< mean HU inside blobs
};

/// Seeded sparse-segmentation phantom. Blobs are smoothed ellipses/ellipsoids with
/// one interior hole labeled background. Distractors are tubes with the intensity
/// of class 1 that are labeled background.
struct SyntheticConfig {
  std::string preset = "custom";
  Dims dims{128, 128};
  std::vector<float> spacing{1.0f, 1.0f};
  int num_volumes = 20;
  double validation_fraction = 0.2;
  std::vector<ForegroundClass> classes{ForegroundClass{}};
  int min_distractors = 3;
  int max_distractors = 4;
  double distractor_length_min = 24.0;   ///< voxels
  double distractor_length_max = 48.0;
  double distractor_radius_min = 1.2;
  double distractor_radius_max = 1.8;
  double background_mean = 0.0;
  double texture_amplitude = 40.0;
  double noise_sigma = 20.0;
  double hole_intensity = -40.0;
  double hole_fraction = 0.08;   ///< hole area as a share of the blob
  double edge_width = 1.0;       ///< boundary smoothing width, voxels
  int max_retries = 500;
  std::uint64_t seed = 42;

  int num_classes() const { return static_cast<int>(classes.size()) + 1; }
  void validate() const;

  KeyValues to_keyvalues() const;
  /// Applies recognised keys on top of *this; unknown keys are left for the caller.
  void apply(const KeyValues& kv);

  static SyntheticConfig preset_named(const std::string& name);
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SyntheticCase {
  Volume volume;   ///< raw HU-like intensities in [-1000, 1000]
  LabelMap labels;
};

/// Deterministic in (cfg, index).
SyntheticCase generate_case(const SyntheticConfig& cfg, int index);

enum class Split { train, validation };

struct ManifestEntry {
  std::string id;
  std::filesystem::path volume;  ///< relative to the manifest directory
  std::filesystem::path labels;
  Split split = Split::train;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  int num_classes = 2;
  KeyValues generator;  ///< echo of the generating config
  std::vector<ManifestEntry> entries;
  std::filesystem::path directory;  ///< where relative paths resolve

  std::vector<ManifestEntry> split(Split s) const;
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

/// Writes volumes, labels and `manifest.txt` into out_dir.
DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg,
                                           const std::filesystem::path& out_dir);

/// Loaded, normalized dataset item.
struct Case {
  std::string id;
  Volume image;  ///< clamp_normalize applied
  LabelMap labels;
};

std::vector<Case> load_split(const DatasetManifest& m, Split s);

/// Share of voxels carrying each label, index = class id.
std::vector<double> class_fractions(const LabelMap& labels);

}  // namespace isample
