#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "isample/augment.hpp"
#include "isample/dualpath.hpp"
#include "isample/eval.hpp"
#include "isample/keyvalue.hpp"
#include "isample/sampler.hpp"
#include "isample/synthetic.hpp"

namespace isample::train {

struct TrainConfig {
  std::string preset = "kidney";
  double base_lr = 0.001;
  double momentum = 0.8;
  double weight_decay = 1e-4;
  int warmup_epochs = 5;
  int epochs = 40;
  int batches_per_epoch = 100;
  int halving_period = 0;  ///< epochs between learning-rate halvings, 0 = never
  int validate_every = 1;  ///< 0 = only after the last epoch
  bool post_filter = false;
  int checkpoint_every = 0;
  std::vector<int> snapshot_epochs;  ///< error maps written after these epochs
  bool concurrent_refresh = false;
  int threads = 0;  ///< patch-extraction workers; 0 or 1 = single context
  std::uint64_t seed = 1;
  sampling::SamplerConfig sampler;
  augment::AugmentConfig augment;

  void validate(int rank) const;
  /// Reads `train.*`, `sampler.*` and `augment.*` keys.
  void apply(const KeyValues& kv);
  KeyValues echo() const;

  static TrainConfig preset_named(const std::string& name);
};

/// Warm-up ramp base·(epoch+1)/warmup, then halving every `halving_period` epochs.
double lr_at(int epoch, const TrainConfig& cfg);

/// g' = g + λ·w (decay-flagged tensors), v ← μ·v + g', w ← w − lr·(g' + μ·v).
/// Throws NumericError before touching anything if a gradient is not finite.
template <typename T>
void nesterov_step(const nn::ParamList<T>& params, std::vector<std::vector<T>>& velocity, double lr,
                   double momentum, double weight_decay);

struct EpochSummary {
  int epoch = 0;
  std::uint64_t iterations = 0;  ///< total after this epoch
  double lr = 0.0;
  double mean_loss = 0.0;
  bool validated = false;
  double val_dice_mean = 0.0;
  std::vector<double> class_dice;
  sampling::SamplerStats stats;
  double mean_error = 1.0;
  std::uint64_t min_version = 0;
  std::uint64_t max_version = 0;
};

struct TrainResult {
  std::vector<double> losses;  ///< one per iteration
  std::vector<EpochSummary> epochs;
  std::uint64_t iterations = 0;
  bool interrupted = false;
  double final_dice = 0.0;
};

struct TrainData {
  std::vector<Case> train;
  std::vector<Case> validation;
};

/// Files written into out_dir when it is non-empty: train.csv (one row per
/// iteration), epochs.csv, batches.csv, timing.csv, checkpoints/ and maps/.
TrainResult run_training(net::DualPathNet<float>& model, const TrainData& data, const TrainConfig& cfg,
                         const std::filesystem::path& out_dir, const std::atomic<bool>* stop = nullptr);

/// Validation Dice of `model` on `cases`.
eval::DiceReport evaluate(net::DualPathNet<float>& model, const std::vector<Case>& cases, bool post_filter);

}  // namespace isample::train
