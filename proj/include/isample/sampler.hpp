#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "isample/dualpath.hpp"
#include "isample/keyvalue.hpp"
#include "isample/rng.hpp"
#include "isample/synthetic.hpp"
#include "isample/volume.hpp"

namespace isample::sampling {

using ErrorValues = std::vector<float>;

/// Per-image error maps. Maps start at 1 everywhere and are replaced whole, so
/// a reader holding a snapshot never sees a partial update.
class ErrorMapStore {
 public:
  struct Entry {
    std::string id;
    Dims dims;
  };

  explicit ErrorMapStore(std::vector<Entry> images);

  std::size_t size() const { return images_.size(); }
  const std::string& id(std::size_t image) const { return images_[image].id; }
  const Dims& dims(std::size_t image) const { return images_[image].dims; }

  std::shared_ptr<const ErrorValues> snapshot(std::size_t image) const;
  float at(std::size_t image, std::size_t voxel) const { return (*snapshot(image))[voxel]; }

  /// Installs a complete replacement map and bumps the image's version.
  void install(std::size_t image, ErrorValues values, std::uint64_t param_version = 0);

  std::uint64_t version(std::size_t image) const;
  /// Parameter version of the model that produced the current map (0 = initial).
  std::uint64_t param_version(std::size_t image) const;
  /// Mean of all voxels over all maps.
  double mean() const;

 private:
  struct Slot {
    std::shared_ptr<const ErrorValues> values;
    std::uint64_t version = 0;
    std::uint64_t param_version = 0;
  };
  std::vector<Entry> images_;
  mutable std::mutex mutex_;
  std::vector<Slot> slots_;
};

/// Voxel lists per image and class.
class ClassIndex {
 public:
  ClassIndex() = default;
  explicit ClassIndex(std::span<const LabelMap* const> labels);
  static ClassIndex from_cases(std::span<const Case> cases);

  std::size_t images() const { return voxels_.size(); }
  const std::vector<int>& present(std::size_t image) const { return present_[image]; }
  const std::vector<std::uint32_t>& voxels(std::size_t image, int k) const { return voxels_[image][k]; }
  const Extent3& extent(std::size_t image) const { return extents_[image]; }

 private:
  std::vector<std::vector<std::vector<std::uint32_t>>> voxels_;
  std::vector<std::vector<int>> present_;
  std::vector<Extent3> extents_;
};

enum class SamplerMode { isample, uniform };

std::string to_string(SamplerMode m);
SamplerMode sampler_mode_from_string(const std::string& s);

/// What a rejected candidate redraws: the whole (image, class, voxel) triple, or
/// only the voxel, keeping the slot's image and class.
enum class RetryScope { triple, voxel };

std::string to_string(RetryScope r);
RetryScope retry_scope_from_string(const std::string& s);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::isample;
  double epsilon = 0.01;
  int max_attempts = 100;
  RetryScope retry = RetryScope::voxel;
  int images_per_batch = 1;
  int patches_per_batch = 12;
  int refresh_size = 0;  ///< images per refresh cycle, 0 = all
  int refresh_every = 0;  ///< batches between refresh cycles, 0 = once per epoch
  Extent3 block{1, 12, 12};  ///< output block the center must keep inside the image

  void validate() const;
};

/// E > u − ε.
inline bool accept(double error, double epsilon, double u) { return error > u - epsilon; }

/// min(1, E + ε), the chance accept() succeeds for u ~ U[0,1).
inline double acceptance_probability(double error, double epsilon) {
  return error + epsilon < 1.0 ? error + epsilon : 1.0;
}

struct Pick {
  std::size_t image = 0;
  int cls = 0;
  std::uint32_t voxel = 0;   ///< sampled voxel, linear index
  Extent3 center{0, 0, 0};   ///< sampled voxel
  Extent3 origin{0, 0, 0};   ///< output block origin after clamping into the image
  int attempts = 1;
  bool forced = false;
  float error = 1.0f;
};

/// Output block origin for a center, shifted inward so the block lies inside the image.
Extent3 block_origin(const Extent3& center, const Extent3& block, const Extent3& image);

/// One sampler draw from `pool`. Under isample the candidate must pass accept();
/// after max_attempts the candidate with the highest error seen is returned.
Pick pick_center(const ErrorMapStore& store, const ClassIndex& index, std::span<const std::size_t> pool,
                 const SamplerConfig& cfg, Rng& rng);

/// Class-balanced draw without rejection; the reference for the ε = 1 reduction.
Pick pick_uniform(const ClassIndex& index, std::span<const std::size_t> pool, const SamplerConfig& cfg,
                  Rng& rng);

struct Batch {
  std::vector<std::size_t> pool;
  std::vector<Pick> picks;
};

/// images_per_batch images without replacement, then patches_per_batch picks.
Batch fill_batch(const ErrorMapStore& store, const ClassIndex& index, const SamplerConfig& cfg, Rng& rng);

/// E(x) = 1 − p(x)[label(x)].
ErrorValues error_from_probabilities(const net::ProbabilityMap& probs, const LabelMap& labels);

void update_error_map(ErrorMapStore& store, std::size_t image, const net::ProbabilityMap& probs,
                      const LabelMap& labels, std::uint64_t param_version = 0);

/// Round-robin refresh of the next `count` images (0 = all) with a frozen model.
class Refresher {
 public:
  std::vector<std::size_t> cycle(ErrorMapStore& store, net::DualPathNet<float>& snapshot,
                                 std::span<const Case> cases, int count, std::uint64_t param_version = 0);
  std::size_t cursor() const { return cursor_; }

 private:
  std::size_t cursor_ = 0;
};

/// Per-epoch sampler statistics.
struct SamplerStats {
  static constexpr int kBins = 8;  ///< attempts 1, 2-3, 4-7, ..., 64-127, 128+
  std::array<std::uint64_t, kBins> attempts_histogram{};
  std::vector<std::uint64_t> class_picks;
  std::uint64_t forced = 0;
  std::uint64_t picks = 0;
  std::uint64_t attempts = 0;

  explicit SamplerStats(int num_classes = 2) : class_picks(num_classes, 0) {}
  void record(const Pick& p);
  double mean_attempts() const { return picks ? double(attempts) / double(picks) : 0.0; }
  static int bin(int attempts);
};

}  // namespace isample::sampling
