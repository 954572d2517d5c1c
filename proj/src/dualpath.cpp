#include "isample/dualpath.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace isample::net {

namespace {

Extent3 padded(const Dims& d, int fill) {
  if (d.size() == 2) return {fill, d[0], d[1]};
  if (d.size() == 3) return {d[0], d[1], d[2]};
  throw std::invalid_argument("extent rank must be 2 or 3");
}

Extent3 kernel_extent(int rank, int k) { return rank == 2 ? Extent3{1, k, k} : Extent3{k, k, k}; }

Extent3 factor_extent(int rank, int f) { return rank == 2 ? Extent3{1, f, f} : Extent3{f, f, f}; }

std::string blocks_to_string(const std::vector<BlockSpec>& blocks) {
  std::string s;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    s += (i ? "," : "") + std::string(blocks[i].kind == nn::ResidualKind::standard ? "standard" : "bottleneck") +
         ":" + std::to_string(blocks[i].width);
  return s;
}

std::vector<BlockSpec> blocks_from_string(const std::string& text, const std::string& key) {
  std::vector<BlockSpec> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("key '" + key + "': expected kind:width");
    auto kind = trim(item.substr(0, colon));
    BlockSpec b;
    if (kind == "standard")
      b.kind = nn::ResidualKind::standard;
    else if (kind == "bottleneck")
      b.kind = nn::ResidualKind::bottleneck;
    else
      throw ConfigError("key '" + key + "': unknown block kind '" + kind + "'");
    b.width = std::stoi(item.substr(colon + 1));
    out.push_back(b);
  }
  return out;
}

template <typename T>
void build_path(nn::Sequential<T>& path, const std::string& name, int stem, const std::vector<BlockSpec>& blocks,
                const Extent3& k, Rng& rng) {
  path.add(nn::make_conv_block<T>(name + ".stem", nn::ConvShape{1, stem, k, 1}, rng));
  int in = stem;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    path.add(std::make_unique<nn::ResBlock<T>>(name + ".block" + std::to_string(i), blocks[i].kind, in,
                                               blocks[i].width, k, rng));
    in = blocks[i].width;
  }
}

}  // namespace

// --- config ------------------------------------------------------------------

void DualPathConfig::validate() const {
  if (rank != 2 && rank != 3) throw std::invalid_argument("rank must be 2 or 3");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("kernel must be odd and >= 1");
  if (hr_stem < 1 || lr_stem < 1) throw std::invalid_argument("stem widths must be >= 1");
  for (const auto* blocks : {&hr_blocks, &lr_blocks})
    for (const auto& b : *blocks)
      if (b.width < 1) throw std::invalid_argument("block widths must be >= 1");
  if (lr_blocks.size() < hr_blocks.size())
    throw std::invalid_argument("low-res path must be at least as deep as the high-res path");
  if (factor < 1) throw std::invalid_argument("factor must be >= 1");
  if (int(hr_patch.size()) != rank || int(lr_patch.size()) != rank)
    throw std::invalid_argument("patch extents must have one entry per axis");
  for (int w : head_widths)
    if (w < 1) throw std::invalid_argument("head widths must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (inference_block < 0) throw std::invalid_argument("inference_block must be >= 0");
}

KeyValues DualPathConfig::to_keyvalues() const {
  KeyValues kv;
  kv.set("rank", std::to_string(rank));
  kv.set("kernel", std::to_string(kernel));
  kv.set("hr_stem", std::to_string(hr_stem));
  kv.set("hr_blocks", blocks_to_string(hr_blocks));
  kv.set("lr_stem", std::to_string(lr_stem));
  kv.set("lr_blocks", blocks_to_string(lr_blocks));
  kv.set("factor", std::to_string(factor));
  kv.set("hr_patch", join(hr_patch));
  kv.set("lr_patch", join(lr_patch));
  kv.set("head_widths", join(head_widths));
  kv.set("dropout", format_real(dropout));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("inference_block", std::to_string(inference_block));
  return kv;
}

std::string DualPathConfig::text() const { return to_keyvalues().text(); }

DualPathConfig DualPathConfig::from_keyvalues(const KeyValues& kv) {
  DualPathConfig c;
  c.rank = static_cast<int>(kv.integer("rank", c.rank));
  if (c.rank == 3 && !kv.has("hr_patch")) c = paper3d();
  c.kernel = static_cast<int>(kv.integer("kernel", c.kernel));
  c.hr_stem = static_cast<int>(kv.integer("hr_stem", c.hr_stem));
  if (kv.has("hr_blocks")) c.hr_blocks = blocks_from_string(kv.str("hr_blocks"), "hr_blocks");
  c.lr_stem = static_cast<int>(kv.integer("lr_stem", c.lr_stem));
  if (kv.has("lr_blocks")) c.lr_blocks = blocks_from_string(kv.str("lr_blocks"), "lr_blocks");
  c.factor = static_cast<int>(kv.integer("factor", c.factor));
  if (kv.has("hr_patch")) c.hr_patch = kv.int_list("hr_patch");
  if (kv.has("lr_patch")) c.lr_patch = kv.int_list("lr_patch");
  if (kv.has("head_widths")) c.head_widths = kv.int_list("head_widths");
  c.dropout = kv.real("dropout", c.dropout);
  c.num_classes = static_cast<int>(kv.integer("num_classes", c.num_classes));
  c.inference_block = static_cast<int>(kv.integer("inference_block", c.inference_block));
  c.validate();
  return c;
}

DualPathConfig DualPathConfig::read(const std::filesystem::path& path) {
  auto kv = KeyValues::read(path);
  auto c = from_keyvalues(kv);
  kv.reject_unused();
  return c;
}

DualPathConfig DualPathConfig::desk2d() { return DualPathConfig{}; }

DualPathConfig DualPathConfig::paper3d() {
  using nn::ResidualKind;
  DualPathConfig c;
  c.rank = 3;
  c.hr_stem = 32;
  c.hr_blocks = {{ResidualKind::standard, 32}, {ResidualKind::standard, 32},
                 {ResidualKind::bottleneck, 64}, {ResidualKind::bottleneck, 64}};
  c.lr_stem = 32;
  c.lr_blocks = {{ResidualKind::standard, 32},   {ResidualKind::standard, 32},
                 {ResidualKind::standard, 64},   {ResidualKind::bottleneck, 64},
                 {ResidualKind::bottleneck, 64}, {ResidualKind::standard, 64}};
  c.hr_patch = {30, 30, 30};
  c.lr_patch = {26, 26, 26};
  c.head_widths = {150, 150};
  c.inference_block = 32;
  return c;
}

DualPathConfig DualPathConfig::tiny(int rank) {
  DualPathConfig c;
  c.rank = rank;
  c.hr_stem = 2;
  c.hr_blocks = {{nn::ResidualKind::standard, 3}};
  c.lr_stem = 2;
  c.lr_blocks = {{nn::ResidualKind::bottleneck, 4}};
  c.factor = 2;
  c.hr_patch = Dims(rank, 8);
  c.lr_patch = Dims(rank, 5);
  c.head_widths = {4};
  c.num_classes = 3;
  c.inference_block = 0;
  return c;
}

// --- geometry ----------------------------------------------------------------

Extent3 Geometry::hr_offset() const { return {-hr_margin[0], -hr_margin[1], -hr_margin[2]}; }

Extent3 Geometry::lr_offset() const {
  Extent3 o;
  for (int a = 0; a < 3; ++a) o[a] = -(crop[a] + factor[a] * lr_margin[a]);
  return o;
}

Extent3 Geometry::lr_context() const {
  return {factor[0] * lr_input[0], factor[1] * lr_input[1], factor[2] * lr_input[2]};
}

// --- network -------------------------------------------------------------------

template <typename T>
DualPathNet<T>::DualPathNet(const DualPathConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), dropout_rng_(seed ^ 0xD0D0D0D0ULL) {
  cfg_.validate();
  Rng init(seed);
  const Extent3 k = kernel_extent(cfg_.rank, cfg_.kernel);
  build_path(hr_path_, "hr", cfg_.hr_stem, cfg_.hr_blocks, k, init);
  build_path(lr_path_, "lr", cfg_.lr_stem, cfg_.lr_blocks, k, init);
  hr_channels_ = hr_path_.output_channels(1);
  lr_channels_ = lr_path_.output_channels(1);
  int in = hr_channels_ + lr_channels_;
  const Extent3 one{1, 1, 1};
  for (std::size_t i = 0; i < cfg_.head_widths.size(); ++i) {
    const std::string name = "head.fc" + std::to_string(i);
    head_.add(std::make_unique<nn::Dropout<T>>(cfg_.dropout, &dropout_rng_));
    head_.add(std::make_unique<nn::Conv<T>>(name, nn::ConvShape{in, cfg_.head_widths[i], one, 1}, true, init));
    head_.add(std::make_unique<nn::BatchNorm<T>>(name + ".bn", cfg_.head_widths[i]));
    head_.add(std::make_unique<nn::ReLU<T>>());
    in = cfg_.head_widths[i];
  }
  head_.add(std::make_unique<nn::Dropout<T>>(cfg_.dropout, &dropout_rng_));
  auto cls = std::make_unique<nn::Conv<T>>("head.classifier", nn::ConvShape{in, cfg_.num_classes, one, 1},
                                           false, init);
  classifier_ = cls.get();
  head_.add(std::move(cls));

  // Geometry must close: the upsampled low-res block covers the high-res block
  // with an even margin, and the output block is a whole number of low-res voxels.
  Geometry& g = geometry_;
  g.factor = factor_extent(cfg_.rank, cfg_.factor);
  g.hr_input = padded(cfg_.hr_patch, 1);
  g.lr_input = padded(cfg_.lr_patch, 1);
  try {
    g.output = hr_path_.output_extent(g.hr_input);
  } catch (const nn::ShapeError& e) {
    throw GeometryError(std::string("high-res patch too small: ") + e.what());
  }
  try {
    g.lr_feature = lr_path_.output_extent(g.lr_input);
  } catch (const nn::ShapeError& e) {
    throw GeometryError(std::string("low-res patch too small: ") + e.what());
  }
  for (int a = 0; a < 3; ++a) {
    const int up = g.lr_feature[a] * g.factor[a];
    const int diff = up - g.output[a];
    if (diff < 0 || diff % 2 != 0)
      throw GeometryError("fusion extents do not close on axis " + std::to_string(a) +
                          ": upsampled low-res extent " + std::to_string(up) +
                          " vs high-res feature extent " + std::to_string(g.output[a]));
    if (g.output[a] % g.factor[a] != 0)
      throw GeometryError("output block extent " + std::to_string(g.output[a]) + " on axis " +
                          std::to_string(a) + " is not a multiple of the factor " +
                          std::to_string(g.factor[a]));
    g.crop[a] = diff / 2;
    g.hr_margin[a] = (g.hr_input[a] - g.output[a]) / 2;
    g.lr_margin[a] = (g.lr_input[a] - g.lr_feature[a]) / 2;
  }
}

template <typename T>
Geometry DualPathNet<T>::geometry_for(const Extent3& output) const {
  Geometry g = geometry_;
  for (int a = 0; a < 3; ++a) {
    const int delta = output[a] - geometry_.output[a];
    if (delta < 0 || delta % g.factor[a] != 0)
      throw GeometryError("output extent " + std::to_string(output[a]) + " on axis " + std::to_string(a) +
                          " must be the training block plus a multiple of the factor");
    g.output[a] = output[a];
    g.hr_input[a] = output[a] + 2 * g.hr_margin[a];
    g.lr_feature[a] = geometry_.lr_feature[a] + delta / g.factor[a];
    g.lr_input[a] = g.lr_feature[a] + 2 * g.lr_margin[a];
  }
  return g;
}

template <typename T>
Tensor<T> upsample_crop(const Tensor<T>& x, const Extent3& factor, const Extent3& offset,
                        const Extent3& extent) {
  Tensor<T> out(x.n, x.c, extent);
  for (int b = 0; b < x.n; ++b)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.channel(b, c);
      T* dst = out.channel(b, c);
      for (int z = 0; z < extent[0]; ++z) {
        const int sz = (z + offset[0]) / factor[0];
        for (int y = 0; y < extent[1]; ++y) {
          const int sy = (y + offset[1]) / factor[1];
          const T* row = src + (std::size_t(sz) * x.sp[1] + sy) * x.sp[2];
          for (int xx = 0; xx < extent[2]; ++xx) *dst++ = row[(xx + offset[2]) / factor[2]];
        }
      }
    }
  return out;
}

template <typename T>
Tensor<T> upsample_crop_backward(const Tensor<T>& g, const Extent3& factor, const Extent3& offset,
                                 const Extent3& source) {
  Tensor<T> out(g.n, g.c, source);
  for (int b = 0; b < g.n; ++b)
    for (int c = 0; c < g.c; ++c) {
      const T* src = g.channel(b, c);
      T* dst = out.channel(b, c);
      for (int z = 0; z < g.sp[0]; ++z) {
        const int sz = (z + offset[0]) / factor[0];
        for (int y = 0; y < g.sp[1]; ++y) {
          const int sy = (y + offset[1]) / factor[1];
          T* row = dst + (std::size_t(sz) * source[1] + sy) * source[2];
          for (int xx = 0; xx < g.sp[2]; ++xx) row[(xx + offset[2]) / factor[2]] += *src++;
        }
      }
    }
  return out;
}

template <typename T>
Tensor<T> DualPathNet<T>::logits(const Tensor<T>& hr, const Tensor<T>& lr, Mode mode) {
  if (hr.n != lr.n || hr.c != 1 || lr.c != 1) throw nn::ShapeError("patch batch mismatch");
  Tensor<T> h = hr_path_.forward(hr, mode);
  Tensor<T> l = lr_path_.forward(lr, mode);
  Extent3 crop;
  for (int a = 0; a < 3; ++a) {
    const int diff = l.sp[a] * geometry_.factor[a] - h.sp[a];
    if (diff < 0 || diff % 2 != 0)
      throw nn::ShapeError("patch extents do not close on axis " + std::to_string(a) + ": high-res " +
                           nn::extent_to_string(hr.sp) + ", low-res " + nn::extent_to_string(lr.sp));
    crop[a] = diff / 2;
  }
  if (mode == Mode::train) {
    lr_feature_extent_ = l.sp;
    crop_ = crop;
  }
  Tensor<T> u = upsample_crop(l, geometry_.factor, crop, h.sp);
  Tensor<T> out = head_.forward(nn::concat_channels(h, u), mode);
  out.require_finite("network logits");
  return out;
}

template <typename T>
Tensor<T> DualPathNet<T>::forward(const Tensor<T>& hr, const Tensor<T>& lr, Mode mode) {
  return nn::softmax(logits(hr, lr, mode));
}

template <typename T>
void DualPathNet<T>::backward(const Tensor<T>& grad_logits) {
  Tensor<T> g = head_.backward(grad_logits);
  const Extent3 sp = g.sp;
  Tensor<T> gh(g.n, hr_channels_, sp), gu(g.n, lr_channels_, sp);
  const std::size_t P = g.plane();
  for (int b = 0; b < g.n; ++b) {
    std::copy_n(g.channel(b, 0), hr_channels_ * P, gh.channel(b, 0));
    std::copy_n(g.channel(b, hr_channels_), lr_channels_ * P, gu.channel(b, 0));
  }
  lr_path_.backward(upsample_crop_backward(gu, geometry_.factor, crop_, lr_feature_extent_));
  hr_path_.backward(gh);
}

template <typename T>
nn::ParamList<T> DualPathNet<T>::parameters() {
  nn::ParamList<T> out;
  hr_path_.collect(out);
  lr_path_.collect(out);
  head_.collect(out);
  return out;
}

template <typename T>
void DualPathNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
std::size_t DualPathNet<T>::parameter_count() {
  return nn::param_count(parameters());
}

template <typename T>
nn::Param<T>* DualPathNet<T>::find(const std::string& name) {
  for (auto* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

template <typename T>
std::vector<nn::LayerSpec> DualPathNet<T>::hr_chain() const {
  std::vector<nn::LayerSpec> out;
  hr_path_.describe(out);
  return out;
}

template <typename T>
std::vector<nn::LayerSpec> DualPathNet<T>::lr_chain() const {
  std::vector<nn::LayerSpec> out;
  lr_path_.describe(out);
  return out;
}

template <typename T>
nn::LayerSpec DualPathNet<T>::classifier_spec() const {
  std::vector<nn::LayerSpec> out;
  classifier_->describe(out);
  return out.front();
}

template <typename T>
Extent3 DualPathNet<T>::hr_receptive_field() const {
  return nn::receptive_field(hr_chain(), {1, 1, 1});
}

template <typename T>
Extent3 DualPathNet<T>::lr_receptive_field() const {
  return nn::receptive_field(lr_chain(), geometry_.factor);
}

template <typename T>
std::string DualPathNet<T>::architecture_text() const {
  std::ostringstream os;
  os << cfg_.text();
  std::vector<nn::LayerSpec> head;
  head_.describe(head);
  for (const auto& s : hr_chain()) os << "# hr " << s.describe() << "\n";
  for (const auto& s : lr_chain()) os << "# lr " << s.describe() << "\n";
  for (const auto& s : head) os << "# head " << s.describe() << "\n";
  return os.str();
}

template <typename T>
std::unique_ptr<DualPathNet<T>> DualPathNet<T>::clone() const {
  auto copy = std::make_unique<DualPathNet<T>>(cfg_, 0);
  copy->copy_parameters_from(*this);
  copy->dropout_rng_ = dropout_rng_;
  return copy;
}

template <typename T>
void DualPathNet<T>::copy_parameters_from(const DualPathNet& other) {
  auto dst = parameters();
  auto src = const_cast<DualPathNet&>(other).parameters();
  if (dst.size() != src.size()) throw GeometryError("parameter layouts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != src[i]->name || dst[i]->shape != src[i]->shape)
      throw GeometryError("parameter layouts differ at " + src[i]->name);
    dst[i]->value = src[i]->value;
  }
}

// --- inference -------------------------------------------------------------

template <typename T>
void fill_inputs(const Volume& image, const Geometry& g, const Extent3& origin, T* hr, T* lr) {
  const Extent3 ho = g.hr_offset();
  for (int z = 0; z < g.hr_input[0]; ++z)
    for (int y = 0; y < g.hr_input[1]; ++y)
      for (int x = 0; x < g.hr_input[2]; ++x)
        *hr++ = static_cast<T>(
            image.at_clamped(origin[0] + ho[0] + z, origin[1] + ho[1] + y, origin[2] + ho[2] + x));
  const Extent3 lo = g.lr_offset();
  const Extent3 f = g.factor;
  const double inv = 1.0 / (double(f[0]) * f[1] * f[2]);
  for (int z = 0; z < g.lr_input[0]; ++z)
    for (int y = 0; y < g.lr_input[1]; ++y)
      for (int x = 0; x < g.lr_input[2]; ++x) {
        double sum = 0.0;
        const int bz = origin[0] + lo[0] + z * f[0], by = origin[1] + lo[1] + y * f[1],
                  bx = origin[2] + lo[2] + x * f[2];
        for (int dz = 0; dz < f[0]; ++dz)
          for (int dy = 0; dy < f[1]; ++dy)
            for (int dx = 0; dx < f[2]; ++dx) sum += image.at_clamped(bz + dz, by + dy, bx + dx);
        *lr++ = static_cast<T>(sum * inv);
      }
}

template <typename T>
ProbabilityMap full_image_inference(DualPathNet<T>& model, const Volume& image, int block) {
  const Geometry& base = model.geometry();
  const Extent3 e = image.extent();
  if (image.rank() != model.config().rank)
    throw nn::ShapeError("image rank does not match the model rank");
  const Extent3 context = base.lr_context();
  for (int a = 0; a < 3; ++a)
    if (e[a] < context[a])
      throw nn::ShapeError("image extent " + std::to_string(e[a]) + " on axis " + std::to_string(a) +
                           " is smaller than the low-res context window " + std::to_string(context[a]));
  if (block == 0) block = model.config().inference_block;
  Extent3 tile;
  for (int a = 0; a < 3; ++a) {
    const int want = block > 0 && base.output[a] > 1 ? std::min(block, e[a]) : base.output[a];
    const int extra = std::max(0, want - base.output[a]);
    tile[a] = base.output[a] + base.factor[a] * ((extra + base.factor[a] - 1) / base.factor[a]);
  }
  const Geometry g = model.geometry_for(tile);
  const int K = model.config().num_classes;
  ProbabilityMap map{image.dims(), K, std::vector<float>(image.size() * K)};
  Tensor<T> hr(1, 1, g.hr_input), lr(1, 1, g.lr_input);
  for (int oz = 0; oz < e[0]; oz += tile[0])
    for (int oy = 0; oy < e[1]; oy += tile[1])
      for (int ox = 0; ox < e[2]; ox += tile[2]) {
        fill_inputs(image, g, {oz, oy, ox}, hr.data.data(), lr.data.data());
        Tensor<T> p = model.forward(hr, lr, Mode::infer);
        for (int z = 0; z < tile[0] && oz + z < e[0]; ++z)
          for (int y = 0; y < tile[1] && oy + y < e[1]; ++y)
            for (int x = 0; x < tile[2] && ox + x < e[2]; ++x) {
              const std::size_t v = (std::size_t(oz + z) * e[1] + (oy + y)) * e[2] + (ox + x);
              for (int k = 0; k < K; ++k) map.probs[v * K + k] = static_cast<float>(p.at(0, k, z, y, x));
            }
      }
  return map;
}

// --- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'I', 'S', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::string& what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw FormatError("checkpoint truncated at " + what);
  return v;
}

std::string read_header(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic: expected 'ISCK'");
  if (get<std::uint16_t>(is, "version") != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version");
  const auto len = get<std::uint32_t>(is, "header length");
  std::string header(len, '\0');
  if (!is.read(header.data(), len)) throw FormatError("checkpoint truncated in header");
  return header;
}

}  // namespace

void save_checkpoint(DualPathNet<float>& model, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp);
    os.write(kCheckpointMagic, 4);
    put<std::uint16_t>(os, kCheckpointVersion);
    const std::string header = model.architecture_text();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    auto params = model.parameters();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
      put<std::uint16_t>(os, static_cast<std::uint16_t>(p->name.size()));
      os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      put<std::uint16_t>(os, static_cast<std::uint16_t>(p->shape.size()));
      for (int d : p->shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(p->value.data()),
               static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void load_checkpoint(DualPathNet<float>& model, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string header = read_header(is);
  if (header != model.architecture_text())
    throw FormatError(path.string() + ": architecture mismatch between checkpoint and model");
  auto params = model.parameters();
  const auto count = get<std::uint32_t>(is, "tensor count");
  if (count != params.size()) throw FormatError(path.string() + ": tensor count mismatch");
  for (auto* p : params) {
    const auto len = get<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint truncated in tensor name");
    if (name != p->name) throw FormatError(path.string() + ": expected tensor " + p->name + ", found " + name);
    const auto rank = get<std::uint16_t>(is, "tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(is, "tensor dim"));
    if (shape != p->shape) throw FormatError(path.string() + ": shape mismatch for " + name);
    if (!is.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float))))
      throw FormatError(path.string() + ": truncated payload for " + name);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
}

DualPathConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  auto kv = KeyValues::parse(read_header(is), path.string());
  return DualPathConfig::from_keyvalues(kv);
}

template class DualPathNet<float>;
template class DualPathNet<double>;
template Tensor<float> upsample_crop(const Tensor<float>&, const Extent3&, const Extent3&, const Extent3&);
template Tensor<double> upsample_crop(const Tensor<double>&, const Extent3&, const Extent3&, const Extent3&);
template Tensor<float> upsample_crop_backward(const Tensor<float>&, const Extent3&, const Extent3&,
                                              const Extent3&);
template Tensor<double> upsample_crop_backward(const Tensor<double>&, const Extent3&, const Extent3&,
                                               const Extent3&);
template void fill_inputs(const Volume&, const Geometry&, const Extent3&, float*, float*);
template void fill_inputs(const Volume&, const Geometry&, const Extent3&, double*, double*);
template ProbabilityMap full_image_inference(DualPathNet<float>&, const Volume&, int);
template ProbabilityMap full_image_inference(DualPathNet<double>&, const Volume&, int);

}  // namespace isample::net
