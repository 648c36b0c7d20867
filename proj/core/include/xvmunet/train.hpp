#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xvmunet/dataset.hpp"
#include "xvmunet/loss.hpp"
#include "xvmunet/network.hpp"
#include "xvmunet/optim.hpp"

namespace xvmunet::train {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::size_t folds = 1;       // 1 = single seeded holdout split
  double val_fraction = 0.2;   // holdout share when folds == 1
  std::uint64_t seed = 7;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossConfig loss;

  void validate() const;
  AdamWConfig optimizer() const;
  CosineSchedule schedule() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Seeded shuffle, then either one holdout split or k contiguous validation chunks.
std::vector<FoldSplit> make_folds(std::size_t n, const TrainConfig& cfg);

// Fisher-Yates driven by Rng::below, identical on every platform.
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng);

struct EpochRecord {
  std::size_t fold = 0;
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_dsc = 0.0;
  double val_iou = 0.0;
  double lr = 0.0;

  // {"fold":..,"epoch":..,"train_loss":..,"val_dsc":..,"val_iou":..,"lr":..}
  std::string to_json() const;
};

struct FoldResult {
  std::size_t fold = 0;
  std::size_t best_epoch = 0;
  double best_dsc = 0.0;
  double best_iou = 0.0;
  double final_dsc = 0.0;
  double final_iou = 0.0;
  ParamStore best_weights;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::vector<FoldResult> folds;
  double mean_dsc = 0.0;  // average over folds of the best-epoch metrics
  double mean_iou = 0.0;
  std::size_t best_fold = 0;

  const ParamStore& best_weights() const { return folds.at(best_fold).best_weights; }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// One AdamW step on the mean loss of the batch; returns that loss.
// NumericalError when the loss is not finite.
double train_step(ParamStore& weights, AdamW& opt, const net::ModelConfig& model, const data::Dataset& data,
                  std::span<const std::size_t> batch, const LossConfig& loss);

// Pixel counts pooled over the selected samples, predictions thresholded at 0.5.
OverlapCounts evaluate(const ParamStore& weights, const net::ModelConfig& model, const data::Dataset& data,
                       std::span<const std::size_t> indices);

// Trains every fold from the same initial weights (seeded by cfg.seed).
TrainResult train(const net::ModelConfig& model, const TrainConfig& cfg, const data::Dataset& data,
                  const EpochCallback& on_epoch = {});

struct AblationRow {
  std::string version;  // "Ver 1" .. "Ver 4"
  bool use_slstm = false;
  bool use_mlstm = false;
  std::string config_hash;
  TrainResult result;
};

// The four sLSTM / mLSTM on-off variants of `base`, same seed and budget.
std::vector<net::ModelConfig> ablation_lattice(const net::ModelConfig& base);

std::vector<AblationRow> ablate(const net::ModelConfig& base, const TrainConfig& cfg, const data::Dataset& data,
                                const std::function<void(const AblationRow&, const EpochRecord&)>& on_epoch = {});

// Fixed-width table with one row per version: flags, DSC, IoU, config hash.
std::string ablation_table(std::span<const AblationRow> rows);

}  // namespace xvmunet::train
