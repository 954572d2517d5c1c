#include "isample/volume.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace isample {

static_assert(std::endian::native == std::endian::little,
              "volume I/O assumes a little-endian host");

Extent3 to_extent3(const Dims& dims) {
  if (dims.size() == 2) return {1, dims[0], dims[1]};
  if (dims.size() == 3) return {dims[0], dims[1], dims[2]};
  throw std::invalid_argument("rank must be 2 or 3, got " + std::to_string(dims.size()));
}

std::size_t voxel_count(const Dims& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  return os.str();
}

namespace {

void check_geometry(const Dims& dims, const std::vector<float>& spacing, std::size_t count,
                    const char* what) {
  if (dims.size() != 2 && dims.size() != 3)
    throw std::invalid_argument(std::string(what) + ": rank must be 2 or 3");
  if (spacing.size() != dims.size())
    throw std::invalid_argument(std::string(what) + ": spacing has wrong rank");
  for (std::size_t a = 0; a < dims.size(); ++a) {
    if (dims[a] <= 0)
      throw std::invalid_argument(std::string(what) + ": dim " + std::to_string(a) +
                                  " must be positive");
    if (!(spacing[a] > 0.0f))
      throw std::invalid_argument(std::string(what) + ": spacing " + std::to_string(a) +
                                  " must be positive");
  }
  if (voxel_count(dims) != count)
    throw std::invalid_argument(std::string(what) + ": voxel count " + std::to_string(count) +
                                " does not match dims " + dims_to_string(dims));
}

std::size_t clamped_index(const Extent3& e, int z, int y, int x) {
  z = std::clamp(z, 0, e[0] - 1);
  y = std::clamp(y, 0, e[1] - 1);
  x = std::clamp(x, 0, e[2] - 1);
  return (static_cast<std::size_t>(z) * e[1] + y) * e[2] + x;
}

constexpr char kMagic[4] = {'I', 'S', 'V', 'L'};
constexpr std::uint16_t kVersion = 1;

template <typename V>
void put(std::ostream& os, V value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <typename V>
V get(std::istream& is, const char* field) {
  V value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(V)))
    throw FormatError(std::string("truncated header at field '") + field + "'");
  return value;
}

void write_header(std::ostream& os, const Dims& dims, const std::vector<float>& spacing,
                  VoxelType type) {
  os.write(kMagic, 4);
  put<std::uint16_t>(os, kVersion);
  put<std::uint16_t>(os, static_cast<std::uint16_t>(dims.size()));
  for (std::size_t a = 0; a < dims.size(); ++a) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(dims[a]));
    put<float>(os, spacing[a]);
  }
  put<std::uint8_t>(os, static_cast<std::uint8_t>(type));
}

struct Header {
  Dims dims;
  std::vector<float> spacing;
  VoxelType type;
};

Header read_header(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad magic: expected 'ISVL'");
  auto version = get<std::uint16_t>(is, "version");
  if (version != kVersion)
    throw FormatError("unsupported version " + std::to_string(version));
  auto rank = get<std::uint16_t>(is, "rank");
  if (rank != 2 && rank != 3) throw FormatError("field 'rank' must be 2 or 3");
  Header h;
  for (int a = 0; a < rank; ++a) {
    auto d = get<std::uint32_t>(is, "dim");
    auto s = get<float>(is, "spacing");
    if (d == 0 || d > (1u << 30))
      throw FormatError("field 'dim' of axis " + std::to_string(a) + " out of range");
    if (!(s > 0.0f))
      throw FormatError("field 'spacing' of axis " + std::to_string(a) + " must be positive");
    h.dims.push_back(static_cast<int>(d));
    h.spacing.push_back(s);
  }
  auto tag = get<std::uint8_t>(is, "dtype");
  if (tag > 1) throw FormatError("field 'dtype' has unknown tag " + std::to_string(tag));
  h.type = static_cast<VoxelType>(tag);
  return h;
}

template <typename V>
std::vector<V> read_payload(std::istream& is, std::size_t count) {
  std::vector<V> data(count);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(V)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(V))
    throw FormatError("field 'payload' holds fewer than the " + std::to_string(count) +
                      " voxels declared by the header");
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("field 'payload' holds more voxels than declared by the header");
  return data;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return is;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

}  // namespace

Volume::Volume(Dims dims, std::vector<float> spacing, std::vector<float> voxels, std::string id)
    : dims_(std::move(dims)),
      spacing_(std::move(spacing)),
      voxels_(std::move(voxels)),
      id_(std::move(id)) {
  check_geometry(dims_, spacing_, voxels_.size(), "Volume");
}

float Volume::at_clamped(int z, int y, int x) const {
  return voxels_[clamped_index(extent(), z, y, x)];
}

LabelMap::LabelMap(Dims dims, std::vector<float> spacing, std::vector<std::uint16_t> labels,
                   int num_classes)
    : dims_(std::move(dims)),
      spacing_(std::move(spacing)),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
  check_geometry(dims_, spacing_, labels_.size(), "LabelMap");
  if (num_classes_ < 2) throw std::invalid_argument("LabelMap: num_classes must be >= 2");
  for (auto l : labels_)
    if (l >= num_classes_)
      throw std::invalid_argument("LabelMap: label " + std::to_string(l) +
                                  " >= num_classes " + std::to_string(num_classes_));
}

std::uint16_t LabelMap::at_clamped(int z, int y, int x) const {
  return labels_[clamped_index(extent(), z, y, x)];
}

Volume clamp_normalize(const Volume& v) {
  std::vector<float> out(v.size());
  auto in = v.voxels();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(in[i], -kHounsfieldClamp, kHounsfieldClamp) / kIntensityScale;
  return Volume(v.dims(), v.spacing(), std::move(out), v.id());
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_header(os, v.dims(), v.spacing(), VoxelType::f32);
  os.write(reinterpret_cast<const char*>(v.voxels().data()),
           static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path, std::string id) {
  auto is = open_in(path);
  try {
    auto h = read_header(is);
    if (h.type != VoxelType::f32) throw FormatError("field 'dtype' is not f32");
    auto data = read_payload<float>(is, voxel_count(h.dims));
    return Volume(std::move(h.dims), std::move(h.spacing), std::move(data), std::move(id));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_labels(const LabelMap& l, const std::filesystem::path& path) {
  auto os = open_out(path);
  write_header(os, l.dims(), l.spacing(), VoxelType::u16);
  os.write(reinterpret_cast<const char*>(l.labels().data()),
           static_cast<std::streamsize>(l.size() * sizeof(std::uint16_t)));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

LabelMap load_labels(const std::filesystem::path& path, int num_classes) {
  auto is = open_in(path);
  try {
    auto h = read_header(is);
    if (h.type != VoxelType::u16) throw FormatError("field 'dtype' is not u16");
    auto data = read_payload<std::uint16_t>(is, voxel_count(h.dims));
    for (auto l : data)
      if (l >= num_classes)
        throw FormatError("field 'payload' holds label " + std::to_string(l) +
                          " >= num_classes " + std::to_string(num_classes));
    return LabelMap(std::move(h.dims), std::move(h.spacing), std::move(data), num_classes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace isample
