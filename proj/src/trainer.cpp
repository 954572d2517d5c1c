#include "isample/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

namespace isample::train {

namespace fs = std::filesystem;

void TrainConfig::validate(int rank) const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ConfigError("warmup_epochs must be in [0, epochs)");
  if (batches_per_epoch < 1) throw ConfigError("batches_per_epoch must be >= 1");
  if (halving_period < 0) throw ConfigError("halving_period must be >= 0");
  if (validate_every < 0 || checkpoint_every < 0) throw ConfigError("intervals must be >= 0");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  sampler.validate();
  augment.validate(rank);
}

void TrainConfig::apply(const KeyValues& kv) {
  if (kv.has("train.preset")) {
    const auto keep_seed = seed;
    const auto keep_augment = augment;
    *this = preset_named(kv.str("train.preset"));
    seed = keep_seed;
    augment = keep_augment;
  }
  base_lr = kv.real("train.base_lr", base_lr);
  momentum = kv.real("train.momentum", momentum);
  weight_decay = kv.real("train.weight_decay", weight_decay);
  warmup_epochs = static_cast<int>(kv.integer("train.warmup_epochs", warmup_epochs));
  epochs = static_cast<int>(kv.integer("train.epochs", epochs));
  batches_per_epoch = static_cast<int>(kv.integer("train.batches_per_epoch", batches_per_epoch));
  halving_period = static_cast<int>(kv.integer("train.halving_period", halving_period));
  validate_every = static_cast<int>(kv.integer("train.validate_every", validate_every));
  post_filter = kv.boolean("train.post_filter", post_filter);
  checkpoint_every = static_cast<int>(kv.integer("train.checkpoint_every", checkpoint_every));
  if (kv.has("train.snapshot_epochs")) snapshot_epochs = kv.int_list("train.snapshot_epochs");
  concurrent_refresh = kv.boolean("train.concurrent_refresh", concurrent_refresh);
  threads = static_cast<int>(kv.integer("train.threads", threads));
  seed = static_cast<std::uint64_t>(kv.integer("train.seed", static_cast<long long>(seed)));
  if (kv.has("sampler.mode")) sampler.mode = sampling::sampler_mode_from_string(kv.str("sampler.mode"));
  sampler.epsilon = kv.real("sampler.epsilon", sampler.epsilon);
  sampler.max_attempts = static_cast<int>(kv.integer("sampler.max_attempts", sampler.max_attempts));
  if (kv.has("sampler.retry")) sampler.retry = sampling::retry_scope_from_string(kv.str("sampler.retry"));
  sampler.images_per_batch = static_cast<int>(kv.integer("sampler.images_per_batch", sampler.images_per_batch));
  sampler.patches_per_batch =
      static_cast<int>(kv.integer("sampler.patches_per_batch", sampler.patches_per_batch));
  sampler.refresh_size = static_cast<int>(kv.integer("sampler.refresh_size", sampler.refresh_size));
  sampler.refresh_every = static_cast<int>(kv.integer("sampler.refresh_every", sampler.refresh_every));
  augment.apply(kv, "augment.");
}

KeyValues TrainConfig::echo() const {
  KeyValues kv;
  kv.set("train.preset", preset);
  kv.set("train.base_lr", format_real(base_lr));
  kv.set("train.momentum", format_real(momentum));
  kv.set("train.weight_decay", format_real(weight_decay));
  kv.set("train.warmup_epochs", std::to_string(warmup_epochs));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.batches_per_epoch", std::to_string(batches_per_epoch));
  kv.set("train.halving_period", std::to_string(halving_period));
  kv.set("train.validate_every", std::to_string(validate_every));
  kv.set("train.post_filter", post_filter ? "true" : "false");
  kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("train.snapshot_epochs", join(snapshot_epochs));
  kv.set("train.concurrent_refresh", concurrent_refresh ? "true" : "false");
  kv.set("train.threads", std::to_string(threads));
  kv.set("train.seed", std::to_string(seed));
  kv.set("sampler.mode", sampling::to_string(sampler.mode));
  kv.set("sampler.epsilon", format_real(sampler.epsilon));
  kv.set("sampler.max_attempts", std::to_string(sampler.max_attempts));
  kv.set("sampler.retry", sampling::to_string(sampler.retry));
  kv.set("sampler.images_per_batch", std::to_string(sampler.images_per_batch));
  kv.set("sampler.patches_per_batch", std::to_string(sampler.patches_per_batch));
  kv.set("sampler.refresh_size", std::to_string(sampler.refresh_size));
  kv.set("sampler.refresh_every", std::to_string(sampler.refresh_every));
  augment.echo(kv, "augment.");
  return kv;
}

TrainConfig TrainConfig::preset_named(const std::string& name) {
  TrainConfig c;
  if (name == "kidney") return c;
  if (name == "multiorgan") {
    c.preset = name;
    c.base_lr = 0.05;
    c.batches_per_epoch = 200;
    c.sampler.patches_per_batch = 24;
    c.sampler.images_per_batch = 2;
    c.halving_period = 25;
    c.epochs = 60;
    return c;
  }
  throw ConfigError("unknown training preset '" + name + "' (expected kidney or multiorgan)");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < cfg.warmup_epochs) return cfg.base_lr * (epoch + 1) / cfg.warmup_epochs;
  if (cfg.halving_period <= 0) return cfg.base_lr;
  return cfg.base_lr * std::ldexp(1.0, -((epoch - cfg.warmup_epochs) / cfg.halving_period));
}

template <typename T>
void nesterov_step(const nn::ParamList<T>& params, std::vector<std::vector<T>>& velocity, double lr,
                   double momentum, double weight_decay) {
  if (velocity.size() != params.size()) {
    velocity.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i]->size(), T(0));
  }
  for (const auto* p : params) {
    if (!p->trainable) continue;
    for (T g : p->grad)
      if (!std::isfinite(g)) throw nn::NumericError("non-finite gradient in " + p->name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->trainable) continue;
    const double lambda = p->decay ? weight_decay : 0.0;
    auto& v = velocity[i];
    for (std::size_t j = 0; j < p->size(); ++j) {
      const double g = double(p->grad[j]) + lambda * double(p->value[j]);
      const double vn = momentum * double(v[j]) + g;
      v[j] = static_cast<T>(vn);
      p->value[j] = static_cast<T>(double(p->value[j]) - lr * (g + momentum * vn));
    }
  }
}

template void nesterov_step(const nn::ParamList<float>&, std::vector<std::vector<float>>&, double, double,
                            double);
template void nesterov_step(const nn::ParamList<double>&, std::vector<std::vector<double>>&, double, double,
                            double);

eval::DiceReport evaluate(net::DualPathNet<float>& model, const std::vector<Case>& cases, bool post_filter) {
  eval::DiceReport report;
  if (!cases.empty()) report.num_classes = cases.front().labels.num_classes();
  for (const auto& c : cases) {
    auto seg = eval::segment(model, c.image, post_filter);
    eval::add_to_report(report, c.id, seg.labels, c.labels);
  }
  return report;
}

namespace {

/// Background worker that refreshes error maps from frozen snapshots. The
/// trainer hands over a snapshot and never waits; a pending snapshot that was
/// not yet picked up is replaced by the newer one.
class ConcurrentRefresher {
 public:
  ConcurrentRefresher(sampling::ErrorMapStore& store, std::span<const Case> cases, int count)
      : store_(store), cases_(cases), count_(count), worker_([this] { run(); }) {}

  ~ConcurrentRefresher() {
    {
      std::lock_guard lock(mutex_);
      done_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  void submit(std::unique_ptr<net::DualPathNet<float>> snapshot, std::uint64_t version) {
    {
      std::lock_guard lock(mutex_);
      pending_ = std::move(snapshot);
      pending_version_ = version;
    }
    cv_.notify_all();
  }

  /// Blocks until the worker is idle with nothing pending.
  void drain() {
    std::unique_lock lock(mutex_);
    idle_cv_.wait(lock, [this] { return !pending_ && !busy_; });
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void run() {
    for (;;) {
      std::unique_ptr<net::DualPathNet<float>> snap;
      std::uint64_t version = 0;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return done_ || pending_; });
        if (!pending_) return;
        snap = std::move(pending_);
        version = pending_version_;
        busy_ = true;
      }
      try {
        refresher_.cycle(store_, *snap, cases_, count_, version);
      } catch (...) {
        std::lock_guard lock(mutex_);
        error_ = std::current_exception();
      }
      {
        std::lock_guard lock(mutex_);
        busy_ = false;
      }
      idle_cv_.notify_all();
    }
  }

  sampling::ErrorMapStore& store_;
  std::span<const Case> cases_;
  int count_;
  sampling::Refresher refresher_;
  std::mutex mutex_;
  std::condition_variable cv_, idle_cv_;
  std::unique_ptr<net::DualPathNet<float>> pending_;
  std::uint64_t pending_version_ = 0;
  bool busy_ = false;
  bool done_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

struct Logs {
  std::ofstream train, epochs, batches, timing;
  bool enabled = false;

  void open(const fs::path& dir, int num_classes) {
    enabled = !dir.empty();
    if (!enabled) return;
    fs::create_directories(dir);
    train.open(dir / "train.csv");
    epochs.open(dir / "epochs.csv");
    batches.open(dir / "batches.csv");
    timing.open(dir / "timing.csv");
    if (!train || !epochs || !batches || !timing) throw std::runtime_error("cannot open logs in " + dir.string());
    train << "iteration,epoch,lr,loss,val_dice_mean";
    for (int k = 1; k < num_classes; ++k) train << ",dice_" << k;
    train << '\n';
    epochs << "epoch,iterations,lr,mean_loss,val_dice_mean";
    for (int k = 1; k < num_classes; ++k) epochs << ",dice_" << k;
    epochs << ",mean_error,map_version_min,map_version_max,attempts_mean,forced";
    for (int k = 0; k < num_classes; ++k) epochs << ",picks_" << k;
    for (int b = 0; b < sampling::SamplerStats::kBins; ++b) epochs << ",attempts_bin_" << b;
    epochs << '\n';
    batches << "iteration,slot,image,class,z,y,x,attempts,forced\n";
    timing << "epoch,train_seconds,refresh_seconds,validation_seconds\n";
  }
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void save_maps(const sampling::ErrorMapStore& store, const std::vector<Case>& cases, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto values = store.snapshot(i);
    save_volume(Volume(store.dims(i), cases[i].image.spacing(), *values, store.id(i)),
                dir / (store.id(i) + ".err.isvl"));
  }
}

void extract_batch(const TrainData& data, const sampling::Batch& batch, const net::Geometry& g,
                   const TrainConfig& cfg, std::uint64_t batch_seed, nn::Tensor<float>& hr,
                   nn::Tensor<float>& lr, std::vector<std::uint16_t>& targets) {
  const std::size_t P = batch.picks.size();
  const std::size_t hp = hr.plane(), lp = lr.plane(), op = nn::Tensor<float>::plane_of(g.output);
  auto work = [&](std::size_t s) {
    const auto& pick = batch.picks[s];
    const Case& c = data.train[pick.image];
    Rng rng(derive_seed(batch_seed, s));
    augment::extract_patch_pair(c.image, c.labels, pick.origin, g, cfg.augment, rng, nn::Mode::train,
                                hr.data.data() + s * hp, lr.data.data() + s * lp, targets.data() + s * op);
  };
  const std::size_t workers = std::min<std::size_t>(cfg.threads > 1 ? cfg.threads : 1, P);
  if (workers <= 1) {
    for (std::size_t s = 0; s < P; ++s) work(s);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t s = w; s < P; s += workers) work(s);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

TrainResult run_training(net::DualPathNet<float>& model, const TrainData& data, const TrainConfig& cfg_in,
                         const fs::path& out_dir, const std::atomic<bool>* stop) {
  TrainConfig cfg = cfg_in;
  const net::Geometry g = model.geometry();
  cfg.sampler.block = g.output;
  cfg.validate(model.config().rank);
  if (data.train.empty()) throw std::invalid_argument("no training images");
  const int K = model.config().num_classes;
  for (const auto& c : data.train)
    if (c.labels.num_classes() != K) throw std::invalid_argument("dataset class count does not match the model");

  std::vector<sampling::ErrorMapStore::Entry> entries;
  for (const auto& c : data.train) entries.push_back({c.id, c.image.dims()});
  sampling::ErrorMapStore store(std::move(entries));
  const auto index = sampling::ClassIndex::from_cases(data.train);
  sampling::Refresher refresher;
  TrainResult result;
  std::unique_ptr<ConcurrentRefresher> background;
  const bool adaptive = cfg.sampler.mode == sampling::SamplerMode::isample;
  if (adaptive && cfg.concurrent_refresh)
    background = std::make_unique<ConcurrentRefresher>(store, data.train, cfg.sampler.refresh_size);

  auto refresh = [&] {
    if (background)
      background->submit(model.clone(), result.iterations);
    else
      refresher.cycle(store, model, data.train, cfg.sampler.refresh_size, result.iterations);
  };

  Logs logs;
  logs.open(out_dir, K);
  auto checkpoint = [&](const std::string& name) {
    if (!logs.enabled) return;
    fs::create_directories(out_dir / "checkpoints");
    net::save_checkpoint(model, out_dir / "checkpoints" / name);
  };

  Rng sampler_rng(derive_seed(cfg.seed, 0x5A3D1E));
  Rng batch_rng(derive_seed(cfg.seed, 0xBA7C4));
  auto params = model.parameters();
  std::vector<std::vector<float>> velocity;
  const std::size_t P = cfg.sampler.patches_per_batch;
  nn::Tensor<float> hr(int(P), 1, g.hr_input), lr(int(P), 1, g.lr_input), grad;
  std::vector<std::uint16_t> targets(P * nn::Tensor<float>::plane_of(g.output));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_epoch = std::chrono::steady_clock::now();
    const double rate = lr_at(epoch, cfg);
    EpochSummary summary;
    summary.epoch = epoch;
    summary.lr = rate;
    summary.stats = sampling::SamplerStats(K);
    double loss_sum = 0.0;
    double refresh_seconds = 0.0;
    for (int b = 0; b < cfg.batches_per_epoch; ++b) {
      if (stop && stop->load()) {
        result.interrupted = true;
        checkpoint("interrupted.isck");
        return result;
      }
      const auto batch = sampling::fill_batch(store, index, cfg.sampler, sampler_rng);
      const std::uint64_t batch_seed = batch_rng.next();
      extract_batch(data, batch, g, cfg, batch_seed, hr, lr, targets);
      model.zero_grad();
      auto logits = model.logits(hr, lr, nn::Mode::train);
      const auto ce = nn::softmax_cross_entropy(logits, std::span<const std::uint16_t>(targets), &grad);
      if (!std::isfinite(ce.loss))
        throw nn::NumericError("non-finite loss at iteration " + std::to_string(result.iterations));
      model.backward(grad);
      nesterov_step(params, velocity, rate, cfg.momentum, cfg.weight_decay);
      ++result.iterations;
      result.losses.push_back(ce.loss);
      loss_sum += ce.loss;
      if (adaptive && cfg.sampler.refresh_every > 0 && result.iterations % cfg.sampler.refresh_every == 0) {
        const auto t = std::chrono::steady_clock::now();
        refresh();
        refresh_seconds += seconds_since(t);
      }
      for (std::size_t s = 0; s < batch.picks.size(); ++s) {
        const auto& p = batch.picks[s];
        summary.stats.record(p);
        if (logs.enabled)
          logs.batches << result.iterations << ',' << s << ',' << data.train[p.image].id << ',' << p.cls << ','
                       << p.center[0] << ',' << p.center[1] << ',' << p.center[2] << ',' << p.attempts << ','
                       << (p.forced ? 1 : 0) << '\n';
      }
      // The epoch's last row is written after validation so it can carry the Dice columns.
      if (logs.enabled && b + 1 < cfg.batches_per_epoch) {
        logs.train << result.iterations << ',' << epoch << ',' << format_real(rate) << ',' << format_real(ce.loss)
                   << ',';
        for (int k = 1; k < K; ++k) logs.train << ',';
        logs.train << '\n';
      }
    }
    const double train_seconds = seconds_since(t_epoch) - refresh_seconds;
    summary.iterations = result.iterations;
    summary.mean_loss = loss_sum / cfg.batches_per_epoch;

    const auto t_refresh = std::chrono::steady_clock::now();
    const bool snapshot_due =
        std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch + 1) != cfg.snapshot_epochs.end();
    if (adaptive && cfg.sampler.refresh_every == 0) refresh();
    if (background && snapshot_due) background->drain();
    refresh_seconds += seconds_since(t_refresh);
    if (snapshot_due && logs.enabled)
      save_maps(store, data.train, out_dir / "maps" / ("epoch_" + std::to_string(epoch + 1)));
    summary.mean_error = store.mean();
    summary.min_version = ~std::uint64_t{0};
    for (std::size_t i = 0; i < store.size(); ++i) {
      summary.min_version = std::min(summary.min_version, store.version(i));
      summary.max_version = std::max(summary.max_version, store.version(i));
    }

    const auto t_val = std::chrono::steady_clock::now();
    const bool last = epoch + 1 == cfg.epochs;
    const bool validate_now = !data.validation.empty() &&
                              (last || (cfg.validate_every > 0 && (epoch + 1) % cfg.validate_every == 0));
    if (validate_now) {
      const auto report = evaluate(model, data.validation, cfg.post_filter);
      summary.validated = true;
      summary.val_dice_mean = report.mean();
      summary.class_dice = report.class_mean();
      result.final_dice = summary.val_dice_mean;
    }
    const double val_seconds = seconds_since(t_val);

    if (logs.enabled) {
      logs.train << result.iterations << ',' << epoch << ',' << format_real(rate) << ','
                 << format_real(result.losses.back()) << ',';
      if (summary.validated) logs.train << format_real(summary.val_dice_mean);
      for (int k = 1; k < K; ++k) {
        logs.train << ',';
        if (summary.validated) logs.train << format_real(summary.class_dice[k]);
      }
      logs.train << '\n';
      logs.epochs << epoch << ',' << summary.iterations << ',' << format_real(rate) << ','
                  << format_real(summary.mean_loss) << ',';
      if (summary.validated) logs.epochs << format_real(summary.val_dice_mean);
      for (int k = 1; k < K; ++k) {
        logs.epochs << ',';
        if (summary.validated) logs.epochs << format_real(summary.class_dice[k]);
      }
      logs.epochs << ',' << format_real(summary.mean_error) << ',' << summary.min_version << ','
                  << summary.max_version << ',' << format_real(summary.stats.mean_attempts()) << ','
                  << summary.stats.forced;
      for (auto c : summary.stats.class_picks) logs.epochs << ',' << c;
      for (auto h : summary.stats.attempts_histogram) logs.epochs << ',' << h;
      logs.epochs << '\n';
      logs.timing << epoch << ',' << train_seconds << ',' << refresh_seconds << ',' << val_seconds << '\n';
      logs.train.flush();
      logs.epochs.flush();
      logs.batches.flush();
      logs.timing.flush();
    }
    result.epochs.push_back(std::move(summary));
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
      checkpoint("epoch_" + std::to_string(epoch + 1) + ".isck");
  }
  if (background) background->drain();
  checkpoint("final.isck");
  return result;
}

}  // namespace isample::train
