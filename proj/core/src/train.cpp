#include "xvmunet/train.hpp"

#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "xvmunet/config.hpp"
#include "xvmunet/errors.hpp"
#include "xvmunet/ops.hpp"

namespace xvmunet::train {

namespace {

constexpr std::uint64_t kSplitStream = 0x5EED5B11u;
constexpr std::uint64_t kEpochStream = 0xE90C4u;

void check_inputs(const net::ModelConfig& model, const data::Dataset& data) {
  if (data.empty()) throw DataError("training needs a nonempty dataset");
  const Shape want{model.in_channels, model.height, model.width};
  for (const auto& s : data) {
    if (s.image.shape() != want) {
      throw ConfigError("sample '" + s.id + "' has shape " + shape_str(s.image.shape()) +
                        " but the model expects " + shape_str(want));
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (folds == 0) throw ConfigError("fold count must be at least 1");
  if (folds == 1 && !(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in (0, 1)");
  }
  optimizer().validate();
  schedule().validate();
  loss.validate();
}

AdamWConfig TrainConfig::optimizer() const { return AdamWConfig{lr, beta1, beta2, adam_eps, weight_decay}; }

CosineSchedule TrainConfig::schedule() const { return CosineSchedule{lr, lr_min, epochs}; }

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

std::vector<FoldSplit> make_folds(std::size_t n, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(cfg.seed, kSplitStream));
  shuffle_indices(order, rng);

  std::vector<FoldSplit> out;
  if (cfg.folds == 1) {
    std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
    n_val = std::max<std::size_t>(n_val, 1);
    if (n_val >= n) throw DataError("dataset of " + std::to_string(n) + " samples is too small to split");
    FoldSplit s;
    s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    s.val.assign(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    out.push_back(std::move(s));
    return out;
  }
  if (n < cfg.folds) {
    throw DataError(std::to_string(cfg.folds) + " folds need at least as many samples, got " + std::to_string(n));
  }
  for (std::size_t f = 0; f < cfg.folds; ++f) {
    const std::size_t lo = f * n / cfg.folds, hi = (f + 1) * n / cfg.folds;
    FoldSplit s;
    for (std::size_t i = 0; i < n; ++i) (i >= lo && i < hi ? s.val : s.train).push_back(order[i]);
    out.push_back(std::move(s));
  }
  return out;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["fold"] = fold;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["val_dsc"] = val_dsc;
  j["val_iou"] = val_iou;
  j["lr"] = lr;
  return j.dump();
}

double train_step(ParamStore& weights, AdamW& opt, const net::ModelConfig& model, const data::Dataset& data,
                  std::span<const std::size_t> batch, const LossConfig& loss) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  Tape tape;
  Binder binder(tape, weights);
  const Scope root(binder);
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (std::size_t i : batch) {
    const data::Sample& s = data.at(i);
    const Var logits = net::forward(root, model, tape.constant(s.image));
    losses.push_back(bce_dice_loss(logits, s.mask, loss));
  }
  const Var total = ops::scale(ops::sum(ops::concat0(losses)), 1.0 / static_cast<double>(batch.size()));
  const double value = total.value().item();
  if (!std::isfinite(value)) {
    std::string ids;
    for (std::size_t i : batch) ids += (ids.empty() ? "" : ",") + data.at(i).id;
    throw NumericalError("non-finite loss on batch [" + ids + "]");
  }
  opt.step(weights, binder.gradients(tape.backward(total)));
  return value;
}

OverlapCounts evaluate(const ParamStore& weights, const net::ModelConfig& model, const data::Dataset& data,
                       std::span<const std::size_t> indices) {
  OverlapCounts total;
  for (std::size_t i : indices) {
    const data::Sample& s = data.at(i);
    total += count_overlap(binarize_logits(net::infer_logits(weights, model, s.image)), s.mask);
  }
  return total;
}

TrainResult train(const net::ModelConfig& model, const TrainConfig& cfg, const data::Dataset& data,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  model.validate();
  check_inputs(model, data);
  const auto splits = make_folds(data.size(), cfg);
  const ParamStore initial = net::init_model(model, cfg.seed);
  const CosineSchedule schedule = cfg.schedule();

  TrainResult result;
  for (std::size_t f = 0; f < splits.size(); ++f) {
    const FoldSplit& split = splits[f];
    ParamStore weights = initial;
    AdamW opt(cfg.optimizer());
    FoldResult fold;
    fold.fold = f;
    fold.best_dsc = -1.0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const double lr = schedule.at(static_cast<double>(epoch - 1));
      opt.set_lr(lr);
      std::vector<std::size_t> order = split.train;
      Rng rng(mix_seed(mix_seed(cfg.seed, kEpochStream + f), epoch));
      shuffle_indices(order, rng);

      double loss_sum = 0.0;
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t e = std::min(order.size(), b + cfg.batch_size);
        const std::span<const std::size_t> batch(order.data() + b, e - b);
        try {
          loss_sum += train_step(weights, opt, model, data, batch, cfg.loss) * static_cast<double>(batch.size());
        } catch (const NumericalError& err) {
          throw NumericalError("fold " + std::to_string(f) + ", epoch " + std::to_string(epoch) + ": " + err.what());
        }
      }

      const OverlapCounts counts = evaluate(weights, model, data, split.val);
      EpochRecord rec{f, epoch, loss_sum / static_cast<double>(order.size()), counts.dsc(), counts.iou(), lr};
      result.log.push_back(rec);
      if (on_epoch) on_epoch(rec);
      if (rec.val_dsc > fold.best_dsc) {
        fold.best_dsc = rec.val_dsc;
        fold.best_iou = rec.val_iou;
        fold.best_epoch = epoch;
        fold.best_weights = weights;
      }
      fold.final_dsc = rec.val_dsc;
      fold.final_iou = rec.val_iou;
    }
    result.folds.push_back(std::move(fold));
  }

  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    result.mean_dsc += result.folds[f].best_dsc;
    result.mean_iou += result.folds[f].best_iou;
    if (result.folds[f].best_dsc > result.folds[result.best_fold].best_dsc) result.best_fold = f;
  }
  result.mean_dsc /= static_cast<double>(result.folds.size());
  result.mean_iou /= static_cast<double>(result.folds.size());
  return result;
}

std::vector<net::ModelConfig> ablation_lattice(const net::ModelConfig& base) {
  std::vector<net::ModelConfig> out;
  for (auto [s, m] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    net::ModelConfig c = base;
    c.use_slstm = s;
    c.use_mlstm = m;
    out.push_back(c);
  }
  return out;
}

std::vector<AblationRow> ablate(const net::ModelConfig& base, const TrainConfig& cfg, const data::Dataset& data,
                                const std::function<void(const AblationRow&, const EpochRecord&)>& on_epoch) {
  std::vector<AblationRow> rows;
  const auto lattice = ablation_lattice(base);
  for (std::size_t v = 0; v < lattice.size(); ++v) {
    AblationRow row;
    row.version = "Ver " + std::to_string(v + 1);
    row.use_slstm = lattice[v].use_slstm;
    row.use_mlstm = lattice[v].use_mlstm;
    row.config_hash = config::config_hash(lattice[v]);
    EpochCallback cb;
    if (on_epoch) cb = [&](const EpochRecord& r) { on_epoch(row, r); };
    row.result = train(lattice[v], cfg, data, cb);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(std::span<const AblationRow> rows) {
  std::string out = "Version  sLSTM  mLSTM  DSC     IoU     Config\n";
  char line[128];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-7s  %-5s  %-5s  %.4f  %.4f  %s\n", r.version.c_str(),
                  r.use_slstm ? "yes" : "no", r.use_mlstm ? "yes" : "no", r.result.mean_dsc, r.result.mean_iou,
                  r.config_hash.c_str());
    out += line;
  }
  return out;
}

}  // namespace xvmunet::train
