#include "isample/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "isample/rng.hpp"

namespace isample {

namespace {

using Vec3 = std::array<double, 3>;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Ellipse/ellipsoid with orthonormal axes. For rank 2 axis 0 is unused.
struct Ellipsoid {
  Vec3 center{};
  Vec3 radii{1, 1, 1};
  std::array<Vec3, 3> axes{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};

  /// Approximate signed distance to the surface (negative inside).
  double signed_distance(const Vec3& p) const {
    Vec3 d = sub(p, center);
    double q = 0.0, g = 0.0;
    for (int a = 0; a < 3; ++a) {
      double t = dot(d, axes[a]) / radii[a];
      q += t * t;
      double ga = t / radii[a];
      g += ga * ga;
    }
    double r = std::sqrt(q);
    if (r < 1e-12) return -*std::min_element(radii.begin(), radii.end());
    return (r - 1.0) * r / std::sqrt(g);
  }
  double bounding_radius() const { return *std::max_element(radii.begin(), radii.end()); }
};

struct Tube {
  Vec3 a{}, b{};
  double radius = 1.0;

  double distance_to_axis(const Vec3& p) const {
    Vec3 ab = sub(b, a);
    double t = std::clamp(dot(sub(p, a), ab) / dot(ab, ab), 0.0, 1.0);
    Vec3 c{a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]};
    return norm(sub(p, c));
  }
  double signed_distance(const Vec3& p) const { return distance_to_axis(p) - radius; }
};

struct Blob {
  Ellipsoid body;
  Ellipsoid hole;
  int label = 1;
  double intensity = 200.0;
};

double coverage(double signed_distance, double width) {
  return std::clamp(0.5 - signed_distance / width, 0.0, 1.0);
}

std::array<Vec3, 3> random_frame(Rng& rng, int rank) {
  if (rank == 2) {
    double t = rng.uniform(0.0, std::numbers::pi);
    return {Vec3{1, 0, 0}, Vec3{0, std::cos(t), std::sin(t)}, Vec3{0, -std::sin(t), std::cos(t)}};
  }
  // Z-Y-X Euler angles.
  double a = rng.uniform(0.0, 2 * std::numbers::pi), b = rng.uniform(-0.5, 0.5),
         c = rng.uniform(0.0, 2 * std::numbers::pi);
  double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b),
         cc = std::cos(c), sc = std::sin(c);
  double m[3][3] = {{cb * cc, cb * sc, -sb},
                    {sa * sb * cc - ca * sc, sa * sb * sc + ca * cc, sa * cb},
                    {ca * sb * cc + sa * sc, ca * sb * sc - sa * cc, ca * cb}};
  return {Vec3{m[0][0], m[0][1], m[0][2]}, Vec3{m[1][0], m[1][1], m[1][2]},
          Vec3{m[2][0], m[2][1], m[2][2]}};
}

Vec3 random_point(Rng& rng, const Extent3& e, int rank, double margin) {
  Vec3 p{0, 0, 0};
  for (int a = (rank == 2 ? 1 : 0); a < 3; ++a) p[a] = rng.uniform(margin, e[a] - 1 - margin);
  return p;
}

/// Builds one blob whose labeled area approximates `area` voxels.
Blob make_blob(Rng& rng, const SyntheticConfig& cfg, int rank, double area, int label,
               double intensity) {
  Blob b;
  b.label = label;
  b.intensity = intensity;
  const double body = area / (1.0 - cfg.hole_fraction);
  b.body.axes = random_frame(rng, rank);
  if (rank == 2) {
    double q = rng.uniform(0.65, 0.9);
    double major = std::sqrt(body / (std::numbers::pi * q));
    b.body.radii = {1.0, q * major, major};
  } else {
    double q1 = rng.uniform(0.7, 0.95), q2 = rng.uniform(0.7, 0.95);
    double major = std::cbrt(body / (4.0 / 3.0 * std::numbers::pi * q1 * q2));
    b.body.radii = {q1 * major, q2 * major, major};
  }
  // Hole sits off-centre along the major axis, leaving a solid far end.
  const auto& r = b.body.radii;
  double hole_r = rank == 2 ? std::sqrt(cfg.hole_fraction * r[1] * r[2])
                            : std::cbrt(cfg.hole_fraction * r[0] * r[1] * r[2]);
  b.hole.radii = {rank == 2 ? 1.0 : hole_r, hole_r, hole_r};
  b.hole.axes = b.body.axes;
  const double margin = 1.5;
  double offset = 0.45 * r[2];
  for (; offset > 0.0; offset -= 0.1) {
    Vec3 c = b.body.center;
    for (int a = 0; a < 3; ++a) c[a] += offset * b.body.axes[2][a];
    b.hole.center = c;
    // Surface of the widened hole along the minor and major axes must be inside.
    bool inside = true;
    for (int ax = (rank == 2 ? 1 : 0); ax < 3 && inside; ++ax)
      for (double s : {-1.0, 1.0}) {
        Vec3 p = c;
        for (int a = 0; a < 3; ++a) p[a] += s * (hole_r + margin) * b.body.axes[ax][a];
        if (b.body.signed_distance(p) > 0.0) inside = false;
      }
    if (inside) break;
  }
  b.hole.center = b.body.center;
  for (int a = 0; a < 3; ++a) b.hole.center[a] += std::max(offset, 0.0) * b.body.axes[2][a];
  return b;
}

void translate(Blob& b, const Vec3& to) {
  Vec3 shift = sub(b.hole.center, b.body.center);
  b.body.center = to;
  for (int a = 0; a < 3; ++a) b.hole.center[a] = to[a] + shift[a];
}

double segment_point_distance(const Tube& t, const Vec3& p) { return t.distance_to_axis(p); }

}  // namespace

void SyntheticConfig::validate() const {
  if (dims.size() != 2 && dims.size() != 3)
    throw std::invalid_argument("SyntheticConfig: rank must be 2 or 3");
  if (spacing.size() != dims.size())
    throw std::invalid_argument("SyntheticConfig: spacing rank differs from dims");
  for (int d : dims)
    if (d < 8) throw std::invalid_argument("SyntheticConfig: dims must be >= 8");
  if (num_volumes < 2) throw std::invalid_argument("SyntheticConfig: need at least 2 volumes");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw std::invalid_argument("SyntheticConfig: validation_fraction must be in (0,1)");
  if (classes.empty()) throw std::invalid_argument("SyntheticConfig: need a foreground class");
  double total = 0.0;
  const double n = static_cast<double>(voxel_count(dims));
  const int smallest = *std::min_element(dims.begin(), dims.end());
  for (const auto& c : classes) {
    if (!(c.fraction > 0.0 && c.fraction < 0.5))
      throw std::invalid_argument("SyntheticConfig: target foreground fraction must be in (0, 0.5)");
    if (c.min_blobs < 1 || c.max_blobs < c.min_blobs)
      throw std::invalid_argument("SyntheticConfig: bad blob count range");
    total += c.fraction;
    // Largest blob radius (one blob carrying the whole class, elongated) must fit.
    double body = 1.15 * c.fraction * n / c.min_blobs / (1.0 - hole_fraction);
    double major = dims.size() == 2 ? std::sqrt(body / (std::numbers::pi * 0.65))
                                    : std::cbrt(body / (4.0 / 3.0 * std::numbers::pi * 0.49));
    if (2.0 * major + 4.0 >= smallest)
      throw std::invalid_argument("SyntheticConfig: blob radius does not fit inside dims");
  }
  if (total >= 0.5) throw std::invalid_argument("SyntheticConfig: total foreground >= 0.5");
  if (min_distractors < 0 || max_distractors < min_distractors)
    throw std::invalid_argument("SyntheticConfig: bad distractor range");
  if (!(hole_fraction > 0.0 && hole_fraction < 0.5))
    throw std::invalid_argument("SyntheticConfig: hole_fraction must be in (0, 0.5)");
  if (!(edge_width > 0.0)) throw std::invalid_argument("SyntheticConfig: edge_width must be > 0");
  if (distractor_length_max >= smallest)
    throw std::invalid_argument("SyntheticConfig: distractor length exceeds dims");
}

SyntheticCase generate_case(const SyntheticConfig& cfg, int index) {
  cfg.validate();
  const int rank = static_cast<int>(cfg.dims.size());
  const Extent3 e = to_extent3(cfg.dims);
  const double n = static_cast<double>(voxel_count(cfg.dims));
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint64_t case_seed;
  {
    std::array<std::uint32_t, 2> s;
    seq.generate(s.begin(), s.end());
    case_seed = (static_cast<std::uint64_t>(s[0]) << 32) | s[1];
  }
  Rng rng(case_seed);

  // Objects: blobs first, then tubes, all kept apart by a gap.
  const double gap = 3.0;
  std::vector<Blob> blobs;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const auto& fc = cfg.classes[c];
    int count = fc.min_blobs + static_cast<int>(rng.index(fc.max_blobs - fc.min_blobs + 1));
    for (int k = 0; k < count; ++k) {
      double area = fc.fraction * n / count * rng.uniform(0.85, 1.15);
      Blob b = make_blob(rng, cfg, rank, area, static_cast<int>(c) + 1, fc.intensity);
      double br = b.body.bounding_radius();
      bool placed = false;
      for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
        Vec3 p = random_point(rng, e, rank, br + 2.0);
        placed = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
          return norm(sub(o.body.center, p)) > br + o.body.bounding_radius() + gap;
        });
        if (placed) translate(b, p);
      }
      if (!placed)
        throw GenerationError("cannot place blob " + std::to_string(k) + " of class " +
                              std::to_string(c + 1) + " without overlap");
      blobs.push_back(b);
    }
  }
  std::vector<Tube> tubes;
  const int ntubes =
      cfg.min_distractors + static_cast<int>(rng.index(cfg.max_distractors - cfg.min_distractors + 1));
  for (int k = 0; k < ntubes; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
      Tube t;
      t.radius = rng.uniform(cfg.distractor_radius_min, cfg.distractor_radius_max);
      double len = rng.uniform(cfg.distractor_length_min, cfg.distractor_length_max);
      t.a = random_point(rng, e, rank, t.radius + 2.0);
      Vec3 dir{0, 0, 0};
      if (rank == 2) {
        double th = rng.uniform(0.0, 2 * std::numbers::pi);
        dir = {0, std::cos(th), std::sin(th)};
      } else {
        Vec3 g{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
        double gn = std::max(norm(g), 1e-9);
        dir = {g[0] / gn, g[1] / gn, g[2] / gn};
      }
      for (int a = 0; a < 3; ++a) t.b[a] = t.a[a] + len * dir[a];
      bool inside = true;
      for (int a = (rank == 2 ? 1 : 0); a < 3; ++a)
        if (t.b[a] < t.radius + 2.0 || t.b[a] > e[a] - 3.0 - t.radius) inside = false;
      if (!inside) continue;
      placed = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        return segment_point_distance(t, o.body.center) > o.body.bounding_radius() + t.radius + gap;
      });
      if (placed) tubes.push_back(t);
    }
    if (!placed)
      throw GenerationError("cannot place distractor " + std::to_string(k) + " without overlap");
  }

  // Low-frequency background texture.
  struct Wave {
    Vec3 k;
    double phase, amp;
  };
  std::vector<Wave> waves;
  const int nwaves = 6;
  for (int w = 0; w < nwaves; ++w) {
    Wave wave;
    double freq = rng.uniform(2 * std::numbers::pi / 64.0, 2 * std::numbers::pi / 16.0);
    Vec3 dir{rank == 3 ? rng.normal(0, 1) : 0.0, rng.normal(0, 1), rng.normal(0, 1)};
    double dn = std::max(norm(dir), 1e-9);
    wave.k = {freq * dir[0] / dn, freq * dir[1] / dn, freq * dir[2] / dn};
    wave.phase = rng.uniform(0.0, 2 * std::numbers::pi);
    wave.amp = cfg.texture_amplitude * std::sqrt(2.0 / nwaves);
    waves.push_back(wave);
  }

  const std::size_t total = voxel_count(cfg.dims);
  std::vector<float> voxels(total);
  std::vector<std::uint16_t> labels(total, 0);
  std::size_t i = 0;
  for (int z = 0; z < e[0]; ++z)
    for (int y = 0; y < e[1]; ++y)
      for (int x = 0; x < e[2]; ++x, ++i) {
        const Vec3 p{double(z), double(y), double(x)};
        double v = cfg.background_mean;
        for (const auto& w : waves) v += w.amp * std::sin(dot(w.k, p) + w.phase);
        for (const auto& t : tubes) {
          double s = coverage(t.signed_distance(p), cfg.edge_width);
          if (s > 0.0) v = (1.0 - s) * v + s * cfg.classes.front().intensity;
        }
        for (const auto& b : blobs) {
          double d = b.body.signed_distance(p);
          double s = coverage(d, cfg.edge_width);
          if (s <= 0.0) continue;
          v = (1.0 - s) * v + s * b.intensity;
          double dh = b.hole.signed_distance(p);
          double sh = coverage(dh, cfg.edge_width);
          v = (1.0 - sh) * v + sh * cfg.hole_intensity;
          if (d <= 0.0 && dh > 0.0) labels[i] = static_cast<std::uint16_t>(b.label);
        }
        v += rng.normal(0.0, cfg.noise_sigma);
        voxels[i] = static_cast<float>(std::clamp(v, -1000.0, 1000.0));
      }

  char id[32];
  std::snprintf(id, sizeof(id), "case_%03d", index);
  return SyntheticCase{Volume(cfg.dims, cfg.spacing, std::move(voxels), id),
                       LabelMap(cfg.dims, cfg.spacing, std::move(labels), cfg.num_classes())};
}

KeyValues SyntheticConfig::to_keyvalues() const {
  KeyValues kv;
  std::vector<double> fr, inten;
  std::vector<int> bmin, bmax;
  for (const auto& c : classes) {
    fr.push_back(c.fraction);
    inten.push_back(c.intensity);
    bmin.push_back(c.min_blobs);
    bmax.push_back(c.max_blobs);
  }
  kv.set("preset", preset);
  kv.set("dims", join(dims));
  kv.set("spacing", join(spacing));
  kv.set("num_volumes", std::to_string(num_volumes));
  kv.set("validation_fraction", format_real(validation_fraction));
  kv.set("fg_fraction", join(fr));
  kv.set("fg_intensity", join(inten));
  kv.set("fg_blobs_min", join(bmin));
  kv.set("fg_blobs_max", join(bmax));
  kv.set("distractors_min", std::to_string(min_distractors));
  kv.set("distractors_max", std::to_string(max_distractors));
  kv.set("distractor_length_min", format_real(distractor_length_min));
  kv.set("distractor_length_max", format_real(distractor_length_max));
  kv.set("distractor_radius_min", format_real(distractor_radius_min));
  kv.set("distractor_radius_max", format_real(distractor_radius_max));
  kv.set("background_mean", format_real(background_mean));
  kv.set("texture_amplitude", format_real(texture_amplitude));
  kv.set("noise_sigma", format_real(noise_sigma));
  kv.set("hole_intensity", format_real(hole_intensity));
  kv.set("hole_fraction", format_real(hole_fraction));
  kv.set("edge_width", format_real(edge_width));
  kv.set("max_retries", std::to_string(max_retries));
  kv.set("seed", std::to_string(seed));
  return kv;
}

void SyntheticConfig::apply(const KeyValues& kv) {
  preset = kv.str("preset", preset);
  if (kv.has("dims")) dims = kv.int_list("dims");
  if (kv.has("spacing")) {
    spacing.clear();
    for (double s : kv.real_list("spacing")) spacing.push_back(static_cast<float>(s));
  }
  num_volumes = static_cast<int>(kv.integer("num_volumes", num_volumes));
  validation_fraction = kv.real("validation_fraction", validation_fraction);
  auto resize = [&](std::size_t k) {
    if (classes.size() != k) classes.resize(k, classes.empty() ? ForegroundClass{} : classes.back());
  };
  if (kv.has("fg_fraction")) {
    auto fr = kv.real_list("fg_fraction");
    resize(fr.size());
    for (std::size_t c = 0; c < fr.size(); ++c) classes[c].fraction = fr[c];
  }
  auto per_class = [&](const char* key, auto setter) {
    if (!kv.has(key)) return;
    auto values = kv.real_list(key);
    if (values.size() != classes.size())
      throw ConfigError(std::string("key '") + key + "' needs one value per foreground class");
    for (std::size_t c = 0; c < values.size(); ++c) setter(classes[c], values[c]);
  };
  per_class("fg_intensity", [](ForegroundClass& c, double v) { c.intensity = v; });
  per_class("fg_blobs_min", [](ForegroundClass& c, double v) { c.min_blobs = int(v); });
  per_class("fg_blobs_max", [](ForegroundClass& c, double v) { c.max_blobs = int(v); });
  min_distractors = static_cast<int>(kv.integer("distractors_min", min_distractors));
  max_distractors = static_cast<int>(kv.integer("distractors_max", max_distractors));
  distractor_length_min = kv.real("distractor_length_min", distractor_length_min);
  distractor_length_max = kv.real("distractor_length_max", distractor_length_max);
  distractor_radius_min = kv.real("distractor_radius_min", distractor_radius_min);
  distractor_radius_max = kv.real("distractor_radius_max", distractor_radius_max);
  background_mean = kv.real("background_mean", background_mean);
  texture_amplitude = kv.real("texture_amplitude", texture_amplitude);
  noise_sigma = kv.real("noise_sigma", noise_sigma);
  hole_intensity = kv.real("hole_intensity", hole_intensity);
  hole_fraction = kv.real("hole_fraction", hole_fraction);
  edge_width = kv.real("edge_width", edge_width);
  max_retries = static_cast<int>(kv.integer("max_retries", max_retries));
  seed = static_cast<std::uint64_t>(kv.integer("seed", static_cast<long long>(seed)));
}

SyntheticConfig SyntheticConfig::preset_named(const std::string& name) {
  SyntheticConfig cfg;
  cfg.preset = name;
  if (name == "kidney2d") return cfg;
  if (name == "multiorgan2d") {
    cfg.classes = {ForegroundClass{1, 1, 0.003, 200.0}, ForegroundClass{1, 1, 0.02, 90.0},
                   ForegroundClass{1, 1, 0.012, -600.0}};
    return cfg;
  }
  if (name == "kidney3d") {
    cfg.dims = {24, 80, 80};
    cfg.spacing = {1.5f, 1.0f, 1.0f};
    cfg.distractor_length_min = 16.0;
    cfg.distractor_length_max = 20.0;
    return cfg;
  }
  throw ConfigError("unknown dataset preset '" + name + "'");
}

std::vector<ManifestEntry> DatasetManifest::split(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e);
  return out;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  os << "# isample dataset manifest\n"
     << "# header: key=value lines up to '---'; generator keys are prefixed 'gen.'\n"
     << "# entries: <split> <id> <volume path> <label path>, paths relative to this file\n";
  os << "format=1\n";
  os << "seed=" << seed << "\n";
  os << "num_classes=" << num_classes << "\n";
  for (const auto& [key, value] : generator.entries()) os << "gen." << key << "=" << value << "\n";
  os << "---\n";
  for (const auto& e : entries)
    os << (e.split == Split::train ? "train" : "validation") << " " << e.id << " "
       << e.volume.generic_string() << " " << e.labels.generic_string() << "\n";
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest " + path.string());
  DatasetManifest m;
  m.directory = path.parent_path();
  std::string line, header;
  bool in_header = true;
  while (std::getline(is, line)) {
    if (in_header) {
      if (trim(line) == "---") {
        in_header = false;
        continue;
      }
      header += line + "\n";
      continue;
    }
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string split_tag, id, vol, lab;
    if (!(ls >> split_tag >> id >> vol >> lab))
      throw FormatError(path.string() + ": malformed entry '" + line + "'");
    ManifestEntry e{id, vol, lab, Split::train};
    if (split_tag == "validation")
      e.split = Split::validation;
    else if (split_tag != "train")
      throw FormatError(path.string() + ": unknown split tag '" + split_tag + "'");
    m.entries.push_back(std::move(e));
  }
  if (in_header) throw FormatError(path.string() + ": missing '---' separator");
  auto kv = KeyValues::parse(header, path.string());
  if (kv.integer("format") != 1) throw FormatError(path.string() + ": unsupported format");
  m.seed = static_cast<std::uint64_t>(std::stoull(kv.str("seed")));
  m.num_classes = static_cast<int>(kv.integer("num_classes"));
  for (const auto& [key, value] : kv.entries())
    if (key.rfind("gen.", 0) == 0) {
      kv.str(key);
      m.generator.set(key.substr(4), value);
    }
  kv.reject_unused();
  return m;
}

DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg,
                                           const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.seed = cfg.seed;
  m.num_classes = cfg.num_classes();
  m.generator = cfg.to_keyvalues();
  m.directory = out_dir;

  // Seeded split: Fisher-Yates over case indices, the first share is validation.
  std::vector<int> order(cfg.num_volumes);
  for (int i = 0; i < cfg.num_volumes; ++i) order[i] = i;
  Rng split_rng(cfg.seed ^ 0x5eed5ULL);
  for (int i = cfg.num_volumes - 1; i > 0; --i)
    std::swap(order[i], order[split_rng.index(static_cast<std::uint64_t>(i) + 1)]);
  const int num_val = std::max(
      1, static_cast<int>(std::lround(cfg.validation_fraction * cfg.num_volumes)));
  std::vector<bool> is_val(cfg.num_volumes, false);
  for (int i = 0; i < num_val; ++i) is_val[order[i]] = true;

  for (int i = 0; i < cfg.num_volumes; ++i) {
    auto c = generate_case(cfg, i);
    ManifestEntry e;
    e.id = c.volume.id();
    e.volume = e.id + ".img.isvl";
    e.labels = e.id + ".lab.isvl";
    e.split = is_val[i] ? Split::validation : Split::train;
    save_volume(c.volume, out_dir / e.volume);
    save_labels(c.labels, out_dir / e.labels);
    m.entries.push_back(std::move(e));
  }
  m.save(out_dir / "manifest.txt");
  return m;
}

std::vector<Case> load_split(const DatasetManifest& m, Split s) {
  std::vector<Case> out;
  for (const auto& e : m.split(s)) {
    auto raw = load_volume(m.directory / e.volume, e.id);
    auto labels = load_labels(m.directory / e.labels, m.num_classes);
    if (labels.dims() != raw.dims())
      throw FormatError(e.id + ": label dims " + dims_to_string(labels.dims()) +
                        " differ from image dims " + dims_to_string(raw.dims()));
    out.push_back(Case{e.id, clamp_normalize(raw), std::move(labels)});
  }
  return out;
}

std::vector<double> class_fractions(const LabelMap& labels) {
  std::vector<double> counts(labels.num_classes(), 0.0);
  for (auto l : labels.labels()) counts[l] += 1.0;
  for (auto& c : counts) c /= static_cast<double>(labels.size());
  return counts;
}

}  // namespace isample
