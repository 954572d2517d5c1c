#include "isample/sampler.hpp"

#include <algorithm>
#include <stdexcept>

namespace isample::sampling {

ErrorMapStore::ErrorMapStore(std::vector<Entry> images) : images_(std::move(images)) {
  slots_.resize(images_.size());
  for (std::size_t i = 0; i < images_.size(); ++i)
    slots_[i].values = std::make_shared<const ErrorValues>(voxel_count(images_[i].dims), 1.0f);
}

std::shared_ptr<const ErrorValues> ErrorMapStore::snapshot(std::size_t image) const {
  std::lock_guard lock(mutex_);
  return slots_.at(image).values;
}

void ErrorMapStore::install(std::size_t image, ErrorValues values, std::uint64_t param_version) {
  if (values.size() != voxel_count(images_.at(image).dims))
    throw std::invalid_argument("error map for " + images_[image].id + " has " +
                                std::to_string(values.size()) + " voxels, expected " +
                                std::to_string(voxel_count(images_[image].dims)));
  for (float& v : values) v = std::clamp(v, 0.0f, 1.0f);
  auto fresh = std::make_shared<const ErrorValues>(std::move(values));
  std::lock_guard lock(mutex_);
  slots_[image].values = std::move(fresh);
  ++slots_[image].version;
  slots_[image].param_version = param_version;
}

std::uint64_t ErrorMapStore::version(std::size_t image) const {
  std::lock_guard lock(mutex_);
  return slots_.at(image).version;
}

std::uint64_t ErrorMapStore::param_version(std::size_t image) const {
  std::lock_guard lock(mutex_);
  return slots_.at(image).param_version;
}

double ErrorMapStore::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    auto m = snapshot(i);
    for (float v : *m) sum += v;
    n += m->size();
  }
  return n ? sum / double(n) : 0.0;
}

// ---------------------------------------------------------------------------

ClassIndex::ClassIndex(std::span<const LabelMap* const> labels) {
  for (const LabelMap* l : labels) {
    std::vector<std::vector<std::uint32_t>> per(l->num_classes());
    const auto lab = l->labels();
    for (std::size_t v = 0; v < lab.size(); ++v) per[lab[v]].push_back(static_cast<std::uint32_t>(v));
    std::vector<int> present;
    for (int k = 0; k < l->num_classes(); ++k)
      if (!per[k].empty()) present.push_back(k);
    voxels_.push_back(std::move(per));
    present_.push_back(std::move(present));
    extents_.push_back(l->extent());
  }
}

ClassIndex ClassIndex::from_cases(std::span<const Case> cases) {
  std::vector<const LabelMap*> labels;
  for (const auto& c : cases) labels.push_back(&c.labels);
  return ClassIndex(labels);
}

std::string to_string(SamplerMode m) { return m == SamplerMode::isample ? "isample" : "uniform"; }

SamplerMode sampler_mode_from_string(const std::string& s) {
  if (s == "isample") return SamplerMode::isample;
  if (s == "uniform") return SamplerMode::uniform;
  throw ConfigError("unknown sampler mode '" + s + "' (expected isample or uniform)");
}

std::string to_string(RetryScope r) { return r == RetryScope::triple ? "triple" : "voxel"; }

RetryScope retry_scope_from_string(const std::string& s) {
  if (s == "triple") return RetryScope::triple;
  if (s == "voxel") return RetryScope::voxel;
  throw ConfigError("unknown retry scope '" + s + "' (expected triple or voxel)");
}

void SamplerConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must be in [0, 1]");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (patches_per_batch < 1) throw ConfigError("patches_per_batch must be >= 1");
  if (images_per_batch < 1) throw ConfigError("images_per_batch must be >= 1");
  if (refresh_size < 0) throw ConfigError("refresh_size must be >= 0");
  if (refresh_every < 0) throw ConfigError("refresh_every must be >= 0");
}

Extent3 block_origin(const Extent3& center, const Extent3& block, const Extent3& image) {
  Extent3 o;
  for (int a = 0; a < 3; ++a) {
    const int hi = std::max(0, image[a] - block[a]);
    o[a] = std::clamp(center[a] - block[a] / 2, 0, hi);
  }
  return o;
}

namespace {

void propose_voxel(const ClassIndex& index, const SamplerConfig& cfg, Rng& rng, Pick& p) {
  const auto& list = index.voxels(p.image, p.cls);
  p.voxel = list[rng.index(list.size())];
  const Extent3& e = index.extent(p.image);
  p.center = {int(p.voxel / (std::uint32_t(e[1]) * e[2])), int(p.voxel / e[2] % e[1]), int(p.voxel % e[2])};
  p.origin = block_origin(p.center, cfg.block, e);
}

Pick propose(const ClassIndex& index, std::span<const std::size_t> pool, const SamplerConfig& cfg, Rng& rng) {
  Pick p;
  p.image = pool[rng.index(pool.size())];
  const auto& present = index.present(p.image);
  if (present.empty()) throw std::logic_error("image without labeled voxels in the sampler pool");
  p.cls = present[rng.index(present.size())];
  propose_voxel(index, cfg, rng, p);
  return p;
}

}  // namespace

Pick pick_uniform(const ClassIndex& index, std::span<const std::size_t> pool, const SamplerConfig& cfg,
                  Rng& rng) {
  return propose(index, pool, cfg, rng);
}

Pick pick_center(const ErrorMapStore& store, const ClassIndex& index, std::span<const std::size_t> pool,
                 const SamplerConfig& cfg, Rng& rng) {
  if (cfg.mode == SamplerMode::uniform || cfg.epsilon >= 1.0) return propose(index, pool, cfg, rng);
  Pick best;
  best.error = -1.0f;
  Pick p;
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    if (attempt == 1 || cfg.retry == RetryScope::triple)
      p = propose(index, pool, cfg, rng);
    else
      propose_voxel(index, cfg, rng, p);
    p.error = store.at(p.image, p.voxel);
    p.attempts = attempt;
    if (accept(p.error, cfg.epsilon, rng.uniform01())) return p;
    if (p.error > best.error) best = p;
  }
  best.attempts = cfg.max_attempts;
  best.forced = true;
  return best;
}

Batch fill_batch(const ErrorMapStore& store, const ClassIndex& index, const SamplerConfig& cfg, Rng& rng) {
  const std::size_t n = index.images();
  if (n < std::size_t(cfg.images_per_batch))
    throw std::invalid_argument("batch needs " + std::to_string(cfg.images_per_batch) +
                                " images but the training set has " + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Batch b;
  for (int i = 0; i < cfg.images_per_batch; ++i) {
    std::swap(order[i], order[i + rng.index(n - i)]);
    b.pool.push_back(order[i]);
  }
  for (int s = 0; s < cfg.patches_per_batch; ++s) b.picks.push_back(pick_center(store, index, b.pool, cfg, rng));
  return b;
}

ErrorValues error_from_probabilities(const net::ProbabilityMap& probs, const LabelMap& labels) {
  if (probs.dims != labels.dims())
    throw std::invalid_argument("probability map dims " + dims_to_string(probs.dims) +
                                " do not match label dims " + dims_to_string(labels.dims()));
  ErrorValues e(labels.size());
  for (std::size_t v = 0; v < e.size(); ++v) e[v] = 1.0f - probs.at(v, labels[v]);
  return e;
}

void update_error_map(ErrorMapStore& store, std::size_t image, const net::ProbabilityMap& probs,
                      const LabelMap& labels, std::uint64_t param_version) {
  store.install(image, error_from_probabilities(probs, labels), param_version);
}

std::vector<std::size_t> Refresher::cycle(ErrorMapStore& store, net::DualPathNet<float>& snapshot,
                                          std::span<const Case> cases, int count, std::uint64_t param_version) {
  if (cases.size() != store.size()) throw std::invalid_argument("refresh cases do not match the store");
  std::vector<std::size_t> done;
  if (cases.empty()) return done;
  const std::size_t n = count <= 0 ? cases.size() : std::min<std::size_t>(count, cases.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t image = cursor_;
    cursor_ = (cursor_ + 1) % cases.size();
    auto probs = net::full_image_inference(snapshot, cases[image].image);
    update_error_map(store, image, probs, cases[image].labels, param_version);
    done.push_back(image);
  }
  return done;
}

int SamplerStats::bin(int attempts) {
  int b = 0;
  while (b + 1 < kBins && attempts >= (2 << b)) ++b;
  return b;
}

void SamplerStats::record(const Pick& p) {
  ++attempts_histogram[bin(p.attempts)];
  if (std::size_t(p.cls) < class_picks.size()) ++class_picks[p.cls];
  forced += p.forced ? 1 : 0;
  ++picks;
  attempts += p.attempts;
}

}  // namespace isample::sampling
