#include "isample/augment.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace isample::augment {

void AugmentConfig::validate(int rank) const {
  if (int(target_spacing.size()) != rank) throw ConfigError("augment target_spacing needs one entry per axis");
  if (!(spacing_jitter >= 0.0 && std::isfinite(spacing_jitter))) throw ConfigError("spacing_jitter must be >= 0");
  for (double s : target_spacing)
    if (!(s - (jitter_enabled ? spacing_jitter : 0.0) > 0.0))
      throw ConfigError("target spacing minus jitter must stay positive");
  const std::size_t angles = rank == 2 ? 1 : 3;
  if (rotation_deg.size() != angles)
    throw ConfigError("augment rotation_deg needs " + std::to_string(angles) + " entries for rank " +
                      std::to_string(rank));
  for (double r : rotation_deg)
    if (!std::isfinite(r) || r < 0.0) throw ConfigError("rotation ranges must be finite and >= 0");
}

void AugmentConfig::apply(const KeyValues& kv, const std::string& prefix) {
  if (kv.has(prefix + "target_spacing")) target_spacing = kv.real_list(prefix + "target_spacing");
  spacing_jitter = kv.real(prefix + "spacing_jitter", spacing_jitter);
  if (kv.has(prefix + "rotation_deg")) rotation_deg = kv.real_list(prefix + "rotation_deg");
  jitter_enabled = kv.boolean(prefix + "jitter", jitter_enabled);
  rotation_enabled = kv.boolean(prefix + "rotation", rotation_enabled);
}

void AugmentConfig::echo(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "target_spacing", join(target_spacing));
  kv.set(prefix + "spacing_jitter", format_real(spacing_jitter));
  kv.set(prefix + "rotation_deg", join(rotation_deg));
  kv.set(prefix + "jitter", jitter_enabled ? "true" : "false");
  kv.set(prefix + "rotation", rotation_enabled ? "true" : "false");
}

AugmentConfig AugmentConfig::for_rank(int rank) {
  AugmentConfig c;
  if (rank == 3) {
    c.target_spacing = {1.5, 1.0, 1.0};
    c.rotation_deg = {10.0, 4.0, 4.0};
  }
  return c;
}

Vec3 Affine::operator()(const Vec3& q) const {
  Vec3 out;
  for (int r = 0; r < 3; ++r) out[r] = t[r] + (m[r][0] * q[0] + m[r][1] * q[1] + m[r][2] * q[2]);
  return out;
}

bool Affine::identity() const {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (m[r][c] != (r == c ? 1.0 : 0.0)) return false;
  return true;
}

namespace {

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) out[r][c] += a[r][k] * b[k][c];
  return out;
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Mat3 rotation_zyx(double az, double ay, double ax) {
  const double cz = std::cos(radians(az)), sz = std::sin(radians(az));
  const double cy = std::cos(radians(ay)), sy = std::sin(radians(ay));
  const double cx = std::cos(radians(ax)), sx = std::sin(radians(ax));
  // Coordinates are (z, y, x); "about z" turns the (y, x) plane.
  const Mat3 rz{{{1, 0, 0}, {0, cz, -sz}, {0, sz, cz}}};
  const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 rx{{{cx, -sx, 0}, {sx, cx, 0}, {0, 0, 1}}};
  if (ay == 0.0 && ax == 0.0) return rz;
  return mul(mul(rz, ry), rx);
}

Affine resample_grid(const Vec3& source_spacing, const Vec3& target_spacing, const Mat3& rotation,
                     const Vec3& center, const Vec3& pivot) {
  Affine a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.m[r][c] = rotation[r][c] * target_spacing[c] / source_spacing[r];
  for (int r = 0; r < 3; ++r)
    a.t[r] = center[r] - (a.m[r][0] * pivot[0] + a.m[r][1] * pivot[1] + a.m[r][2] * pivot[2]);
  return a;
}

Transform identity_transform(const AugmentConfig& cfg, int rank) {
  Transform t;
  for (int a = 0; a < rank; ++a) t.spacing[3 - rank + a] = cfg.target_spacing[a];
  return t;
}

Transform draw_transform(const AugmentConfig& cfg, int rank, Rng& rng) {
  Transform t = identity_transform(cfg, rank);
  if (cfg.jitter_enabled && cfg.spacing_jitter > 0.0)
    for (int a = 3 - rank; a < 3; ++a) t.spacing[a] += rng.uniform(-cfg.spacing_jitter, cfg.spacing_jitter);
  if (cfg.rotation_enabled) {
    if (rank == 2) {
      t.rotation = rotation_zyx(rng.uniform(-cfg.rotation_deg[0], cfg.rotation_deg[0]), 0.0, 0.0);
    } else {
      const double az = rng.uniform(-cfg.rotation_deg[0], cfg.rotation_deg[0]);
      const double ay = rng.uniform(-cfg.rotation_deg[1], cfg.rotation_deg[1]);
      const double ax = rng.uniform(-cfg.rotation_deg[2], cfg.rotation_deg[2]);
      t.rotation = rotation_zyx(az, ay, ax);
    }
  }
  return t;
}

float sample_linear(const Volume& v, const Vec3& p) {
  int base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(p[a]);
    base[a] = static_cast<int>(f);
    frac[a] = p[a] - f;
  }
  double sum = 0.0;
  for (int dz = 0; dz < (frac[0] > 0.0 ? 2 : 1); ++dz)
    for (int dy = 0; dy < (frac[1] > 0.0 ? 2 : 1); ++dy)
      for (int dx = 0; dx < (frac[2] > 0.0 ? 2 : 1); ++dx) {
        const double w = (dz ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                         (dx ? frac[2] : 1.0 - frac[2]);
        sum += w * v.at_clamped(base[0] + dz, base[1] + dy, base[2] + dx);
      }
  return static_cast<float>(sum);
}

std::uint16_t sample_nearest(const LabelMap& l, const Vec3& p) {
  return l.at_clamped(static_cast<int>(std::floor(p[0] + 0.5)), static_cast<int>(std::floor(p[1] + 0.5)),
                      static_cast<int>(std::floor(p[2] + 0.5)));
}

void extract_patch_pair(const Volume& image, const LabelMap& labels, const Extent3& origin,
                        const net::Geometry& g, const AugmentConfig& cfg, Rng& rng, nn::Mode mode,
                        float* hr, float* lr, std::uint16_t* target) {
  const int rank = image.rank();
  const Transform tr = mode == nn::Mode::train ? draw_transform(cfg, rank, rng) : identity_transform(cfg, rank);
  Vec3 src_spacing{1.0, 1.0, 1.0}, pivot, center;
  for (int a = 0; a < rank; ++a) src_spacing[3 - rank + a] = image.spacing()[a];
  for (int a = 0; a < 3; ++a) {
    pivot[a] = (g.output[a] - 1) / 2.0;
    center[a] = origin[a] + pivot[a];
  }
  const Affine map = resample_grid(src_spacing, tr.spacing, tr.rotation, center, pivot);

  if (map.identity()) {
    net::fill_inputs(image, g, origin, hr, lr);
    for (int z = 0; z < g.output[0]; ++z)
      for (int y = 0; y < g.output[1]; ++y)
        for (int x = 0; x < g.output[2]; ++x)
          *target++ = labels.at_clamped(origin[0] + z, origin[1] + y, origin[2] + x);
    return;
  }

  const Extent3 ho = g.hr_offset();
  for (int z = 0; z < g.hr_input[0]; ++z)
    for (int y = 0; y < g.hr_input[1]; ++y)
      for (int x = 0; x < g.hr_input[2]; ++x)
        *hr++ = sample_linear(image, map({double(ho[0] + z), double(ho[1] + y), double(ho[2] + x)}));

  const Extent3 lo = g.lr_offset();
  const Extent3 f = g.factor;
  const double inv = 1.0 / (double(f[0]) * f[1] * f[2]);
  for (int z = 0; z < g.lr_input[0]; ++z)
    for (int y = 0; y < g.lr_input[1]; ++y)
      for (int x = 0; x < g.lr_input[2]; ++x) {
        double sum = 0.0;
        for (int dz = 0; dz < f[0]; ++dz)
          for (int dy = 0; dy < f[1]; ++dy)
            for (int dx = 0; dx < f[2]; ++dx)
              sum += sample_linear(image, map({double(lo[0] + z * f[0] + dz), double(lo[1] + y * f[1] + dy),
                                               double(lo[2] + x * f[2] + dx)}));
        *lr++ = static_cast<float>(sum * inv);
      }

  for (int z = 0; z < g.output[0]; ++z)
    for (int y = 0; y < g.output[1]; ++y)
      for (int x = 0; x < g.output[2]; ++x) *target++ = sample_nearest(labels, map({double(z), double(y), double(x)}));
}

PatchPair extract_patch_pair(const Volume& image, const LabelMap& labels, const Extent3& origin,
                             const net::Geometry& g, const AugmentConfig& cfg, Rng& rng, nn::Mode mode) {
  PatchPair p;
  p.origin = origin;
  p.hr.resize(nn::Tensor<float>::plane_of(g.hr_input));
  p.lr.resize(nn::Tensor<float>::plane_of(g.lr_input));
  p.labels.resize(nn::Tensor<float>::plane_of(g.output));
  extract_patch_pair(image, labels, origin, g, cfg, rng, mode, p.hr.data(), p.lr.data(), p.labels.data());
  return p;
}

}  // namespace isample::augment
