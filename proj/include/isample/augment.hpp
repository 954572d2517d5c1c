#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "isample/dualpath.hpp"
#include "isample/keyvalue.hpp"
#include "isample/rng.hpp"
#include "isample/volume.hpp"

namespace isample::augment {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

/// Patch resampling recipe. Axes are (z, y, x); 2D uses y and x only.
struct AugmentConfig {
  std::vector<double> target_spacing{1.0, 1.0};
  double spacing_jitter = 0.1;              ///< half-width of the uniform jitter, mm
  std::vector<double> rotation_deg{10.0};   ///< 2D: one angle; 3D: about z, y, x
  bool jitter_enabled = true;
  bool rotation_enabled = true;

  void validate(int rank) const;
  void apply(const KeyValues& kv, const std::string& prefix);
  void echo(KeyValues& kv, const std::string& prefix) const;

  static AugmentConfig for_rank(int rank);
};

/// Affine map from patch coordinates to source voxel coordinates: src = m·q + t.
struct Affine {
  Mat3 m{};
  Vec3 t{};

  Vec3 operator()(const Vec3& q) const;
  bool identity() const;
};

/// Rotation about z, then y, then x (angles in degrees, composed as Rz·Ry·Rx).
Mat3 rotation_zyx(double az, double ay, double ax);

/// Patch voxel q (in target-spacing voxels, relative to the output block
/// origin) to source voxels. The rotation turns about the block center, which
/// sits at `center` in the source.
Affine resample_grid(const Vec3& source_spacing, const Vec3& target_spacing, const Mat3& rotation,
                     const Vec3& center, const Vec3& pivot);

/// Draw of jittered spacing and rotation angles.
struct Transform {
  Vec3 spacing{1.0, 1.0, 1.0};
  Mat3 rotation{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
};

Transform draw_transform(const AugmentConfig& cfg, int rank, Rng& rng);
Transform identity_transform(const AugmentConfig& cfg, int rank);

/// Trilinear (bilinear in 2D) value with edge replication.
float sample_linear(const Volume& v, const Vec3& p);
/// Nearest label with edge replication.
std::uint16_t sample_nearest(const LabelMap& l, const Vec3& p);

struct PatchPair {
  std::vector<float> hr;
  std::vector<float> lr;
  std::vector<std::uint16_t> labels;  ///< aligned with the output block
  Extent3 origin{0, 0, 0};
};

/// Writes one training sample for the output block at `origin`. In inference
/// mode (or with both transforms off and target spacing equal to native) the
/// result is a direct crop, identical to net::fill_inputs.
void extract_patch_pair(const Volume& image, const LabelMap& labels, const Extent3& origin,
                        const net::Geometry& g, const AugmentConfig& cfg, Rng& rng, nn::Mode mode,
                        float* hr, float* lr, std::uint16_t* target);

PatchPair extract_patch_pair(const Volume& image, const LabelMap& labels, const Extent3& origin,
                             const net::Geometry& g, const AugmentConfig& cfg, Rng& rng, nn::Mode mode);

}  // namespace isample::augment
