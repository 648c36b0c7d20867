#pragma once

#include <cstddef>

#include "xvmunet/autodiff.hpp"
#include "xvmunet/tensor.hpp"

namespace xvmunet::train {

struct LossConfig {
  double lambda_bce = 1.0;
  double lambda_dice = 1.0;
  double eps = 1e-7;     // probability clamp
  double smooth = 1.0;   // added to Dice numerator and denominator

  // Throws ConfigError for negative weights or both weights zero.
  void validate() const;

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossParts {
  double bce = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

// Plain evaluation of the weighted BCE + soft Dice loss. target must hold only 0/1
// and match logits in shape.
LossParts bce_dice_value(const Tensor& logits, const Tensor& target, const LossConfig& cfg);

// Same loss recorded as one node; gradient flows to logits only.
Var bce_dice_loss(const Var& logits, const Tensor& target, const LossConfig& cfg);

// Pixel confusion counts between a hard prediction and a hard ground truth.
struct OverlapCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  OverlapCounts& operator+=(const OverlapCounts& o);
  // Both masks empty scores 1.
  double dsc() const;
  double iou() const;
};

// pred and gt hold 0/1; ContractError on shape mismatch, DataError on other values.
OverlapCounts count_overlap(const Tensor& pred, const Tensor& gt);

struct Overlap {
  double dsc = 0.0;
  double iou = 0.0;
};
Overlap dsc_iou(const Tensor& pred, const Tensor& gt);

// Probability > 0.5, i.e. logit > 0, becomes foreground.
Tensor binarize_logits(const Tensor& logits);

}  // namespace xvmunet::train
