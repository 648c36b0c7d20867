#include "xvmunet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "xvmunet/errors.hpp"

namespace xvmunet::train {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_binary_target(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) {
    throw DimensionError("bce_dice_loss: logits " + shape_str(logits.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0 && target[i] != 1.0) {
      throw DataError("bce_dice_loss: target value " + std::to_string(target[i]) + " at index " +
                      std::to_string(i) + " is not 0 or 1");
    }
  }
}

struct Forward {
  std::vector<double> prob;  // clamped
  std::vector<bool> active;  // clamp not engaged
  double bce = 0.0;
  double intersection = 0.0;
  double mass = 0.0;  // sum prob + sum target
  double dice = 0.0;
};

Forward run_forward(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  const std::size_t n = logits.size();
  Forward f;
  f.prob.resize(n);
  f.active.resize(n);
  double log_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = sigmoid(logits[i]);
    const double p = std::clamp(s, cfg.eps, 1.0 - cfg.eps);
    f.prob[i] = p;
    f.active[i] = s > cfg.eps && s < 1.0 - cfg.eps;
    const double y = target[i];
    log_sum += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    f.intersection += p * y;
    f.mass += p + y;
  }
  f.bce = -log_sum / static_cast<double>(n);
  f.dice = 1.0 - (2.0 * f.intersection + cfg.smooth) / (f.mass + cfg.smooth);
  return f;
}

}  // namespace

void LossConfig::validate() const {
  if (lambda_bce < 0.0 || lambda_dice < 0.0) throw ConfigError("loss weights must be non-negative");
  if (lambda_bce == 0.0 && lambda_dice == 0.0) throw ConfigError("loss weights cannot both be zero");
  if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("loss eps must lie in (0, 0.5)");
  if (!(smooth >= 0.0)) throw ConfigError("dice smooth term must be non-negative");
}

LossParts bce_dice_value(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  require_binary_target(logits, target);
  const Forward f = run_forward(logits, target, cfg);
  return LossParts{f.bce, f.dice, cfg.lambda_bce * f.bce + cfg.lambda_dice * f.dice};
}

Var bce_dice_loss(const Var& logits, const Tensor& target, const LossConfig& cfg) {
  require_binary_target(logits.value(), target);
  auto f = std::make_shared<Forward>(run_forward(logits.value(), target, cfg));
  const double total = cfg.lambda_bce * f->bce + cfg.lambda_dice * f->dice;
  const Var parents[] = {logits};
  return logits.tape().record(
      Tensor::scalar(total), parents, [logits, target, cfg, f](std::span<const double> g, GradSink& sink) {
        auto gl = sink.at(logits);
        const std::size_t n = target.size();
        const double inv_n = 1.0 / static_cast<double>(n);
        const double num = 2.0 * f->intersection + cfg.smooth;
        const double den = f->mass + cfg.smooth;
        for (std::size_t i = 0; i < n; ++i) {
          if (!f->active[i]) continue;
          const double p = f->prob[i], y = target[i];
          const double d_bce = -inv_n * (y / p - (1.0 - y) / (1.0 - p));
          const double d_dice = -(2.0 * y * den - num) / (den * den);
          gl[i] += g[0] * (cfg.lambda_bce * d_bce + cfg.lambda_dice * d_dice) * p * (1.0 - p);
        }
      });
}

OverlapCounts& OverlapCounts::operator+=(const OverlapCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

double OverlapCounts::dsc() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double OverlapCounts::iou() const {
  const std::size_t denom = tp + fp + fn;
  return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

OverlapCounts count_overlap(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ContractError("dsc_iou: prediction " + shape_str(pred.shape()) + " vs ground truth " +
                        shape_str(gt.shape()));
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], y = gt[i];
    if ((p != 0.0 && p != 1.0) || (y != 0.0 && y != 1.0)) {
      throw DataError("dsc_iou: masks must be binary, found " + std::to_string(p) + " / " + std::to_string(y));
    }
    if (p == 1.0) {
      ++(y == 1.0 ? c.tp : c.fp);
    } else {
      ++(y == 1.0 ? c.fn : c.tn);
    }
  }
  return c;
}

Overlap dsc_iou(const Tensor& pred, const Tensor& gt) {
  const OverlapCounts c = count_overlap(pred, gt);
  return Overlap{c.dsc(), c.iou()};
}

Tensor binarize_logits(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

}  // namespace xvmunet::train
