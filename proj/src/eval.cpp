#include "isample/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace isample::eval {

double dice(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dice: mask sizes differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    both += (a[i] != 0) && (b[i] != 0);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

std::vector<int> label_components(const Mask& mask, const Extent3& e, int* count) {
  const std::size_t n = std::size_t(e[0]) * e[1] * e[2];
  if (mask.size() != n) throw std::invalid_argument("mask size does not match its extent");
  std::vector<int> id(n, 0);
  std::vector<std::size_t> stack;
  int next = 0;
  const std::size_t sy = e[2], sz = std::size_t(e[1]) * e[2];
  for (std::size_t start = 0; start < n; ++start) {
    if (!mask[start] || id[start]) continue;
    id[start] = ++next;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const int z = int(v / sz), y = int(v / sy % e[1]), x = int(v % sy);
      auto visit = [&](bool ok, std::size_t w) {
        if (ok && mask[w] && !id[w]) {
          id[w] = next;
          stack.push_back(w);
        }
      };
      visit(z > 0, v - sz);
      visit(z + 1 < e[0], v + sz);
      visit(y > 0, v - sy);
      visit(y + 1 < e[1], v + sy);
      visit(x > 0, v - 1);
      visit(x + 1 < e[2], v + 1);
    }
  }
  if (count) *count = next;
  return id;
}

Mask largest_component_filter(const Mask& mask, const Extent3& extent) {
  int count = 0;
  auto id = label_components(mask, extent, &count);
  if (count <= 1) return mask;
  std::vector<std::size_t> sizes(count + 1, 0);
  for (int v : id) ++sizes[v];
  int best = 1;
  for (int c = 2; c <= count; ++c)
    if (sizes[c] > sizes[best]) best = c;
  Mask out(mask.size(), 0);
  for (std::size_t i = 0; i < id.size(); ++i) out[i] = id[i] == best;
  return out;
}

std::vector<std::uint16_t> argmax_labels(const net::ProbabilityMap& probs) {
  std::vector<std::uint16_t> out(probs.voxels());
  for (std::size_t v = 0; v < out.size(); ++v) {
    int best = 0;
    for (int k = 1; k < probs.num_classes; ++k)
      if (probs.at(v, k) > probs.at(v, best)) best = k;
    out[v] = static_cast<std::uint16_t>(best);
  }
  return out;
}

Mask class_mask(std::span<const std::uint16_t> labels, int k) {
  Mask m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == k;
  return m;
}

void filter_per_class(std::vector<std::uint16_t>& labels, const Dims& dims, int num_classes) {
  const Extent3 e = to_extent3(dims);
  for (int k = 1; k < num_classes; ++k) {
    const Mask keep = largest_component_filter(class_mask(labels, k), e);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k && !keep[i]) labels[i] = 0;
  }
}

SegmentationResult segment(net::DualPathNet<float>& model, const Volume& image, bool post_filter,
                           bool keep_probabilities) {
  SegmentationResult r;
  r.image_id = image.id();
  r.dims = image.dims();
  auto probs = net::full_image_inference(model, image);
  r.labels = argmax_labels(probs);
  if (post_filter) filter_per_class(r.labels, r.dims, probs.num_classes);
  if (keep_probabilities) r.probabilities = std::move(probs);
  return r;
}

void add_to_report(DiceReport& report, const std::string& image, std::span<const std::uint16_t> predicted,
                   const LabelMap& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("prediction and truth sizes differ");
  report.num_classes = truth.num_classes();
  for (int k = 1; k < truth.num_classes(); ++k) {
    const Mask p = class_mask(predicted, k), t = class_mask(truth.labels(), k);
    DiceRow row{image, k, dice(p, t), 0, 0};
    for (std::size_t i = 0; i < p.size(); ++i) {
      row.predicted += p[i];
      row.truth += t[i];
    }
    report.rows.push_back(row);
  }
}

std::vector<double> DiceReport::class_mean() const {
  std::vector<double> sum(num_classes, 0.0), n(num_classes, 0.0);
  for (const auto& r : rows) {
    sum[r.cls] += r.dice;
    n[r.cls] += 1.0;
  }
  for (int k = 0; k < num_classes; ++k) sum[k] = n[k] > 0 ? sum[k] / n[k] : 0.0;
  return sum;
}

std::vector<double> DiceReport::class_stddev() const {
  const auto mean = class_mean();
  std::vector<double> ss(num_classes, 0.0), n(num_classes, 0.0);
  for (const auto& r : rows) {
    ss[r.cls] += (r.dice - mean[r.cls]) * (r.dice - mean[r.cls]);
    n[r.cls] += 1.0;
  }
  for (int k = 0; k < num_classes; ++k) ss[k] = n[k] > 1 ? std::sqrt(ss[k] / (n[k] - 1)) : 0.0;
  return ss;
}

double DiceReport::mean() const {
  const auto m = class_mean();
  if (num_classes < 2) return 0.0;
  double s = 0.0;
  for (int k = 1; k < num_classes; ++k) s += m[k];
  return s / (num_classes - 1);
}

void DiceReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "image,class,dice,predicted_voxels,true_voxels\n";
  for (const auto& r : rows)
    os << r.image << ',' << r.cls << ',' << format_real(r.dice) << ',' << r.predicted << ',' << r.truth << '\n';
}

std::uint8_t error_to_pixel(float e) {
  const double v = std::floor(255.0 * std::clamp(double(e), 0.0, 1.0) + 0.5);
  return static_cast<std::uint8_t>(v);
}

void export_error_map(const std::vector<float>& values, const Dims& dims, const std::filesystem::path& path,
                      int axis, int index) {
  const Extent3 e = to_extent3(dims);
  if (values.size() != voxel_count(dims)) throw std::invalid_argument("error map size does not match dims");
  int rows = e[1], cols = e[2];
  if (dims.size() == 3) {
    if (axis < 0 || axis > 2) throw std::invalid_argument("slice axis must be 0, 1 or 2");
    if (index < 0 || index >= e[axis])
      throw std::invalid_argument("slice index " + std::to_string(index) + " outside axis extent " +
                                  std::to_string(e[axis]));
    rows = axis == 0 ? e[1] : e[0];
    cols = axis == 2 ? e[1] : e[2];
  }
  std::vector<std::uint8_t> px(std::size_t(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int z = 0, y = r, x = c;
      if (dims.size() == 3) {
        if (axis == 0) z = index, y = r, x = c;
        else if (axis == 1) z = r, y = index, x = c;
        else z = r, y = c, x = index;
      }
      px[std::size_t(r) * cols + c] = error_to_pixel(values[(std::size_t(z) * e[1] + y) * e[2] + x]);
    }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace isample::eval
