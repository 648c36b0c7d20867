#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "xvmunet/errors.hpp"
#include "xvmunet/synthetic.hpp"
#include "xvmunet/train.hpp"

using namespace xvmunet;
using namespace xvmunet::testing;
using namespace xvmunet::train;

namespace {

Tensor random_mask(Shape shape, Rng& rng, double p = 0.3) {
  Tensor m(std::move(shape));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p ? 1.0 : 0.0;
  return m;
}

LossParts loss_oracle(const Tensor& logits, const Tensor& y, const LossConfig& cfg) {
  double bce = 0.0, inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double p = 1.0 / (1.0 + std::exp(-logits[i]));
    p = std::min(std::max(p, cfg.eps), 1.0 - cfg.eps);
    bce -= y[i] == 1.0 ? std::log(p) : std::log(1.0 - p);
    inter += p * y[i];
    sum_p += p;
    sum_y += y[i];
  }
  bce /= static_cast<double>(logits.size());
  const double dice = 1.0 - (2.0 * inter + cfg.smooth) / (sum_p + sum_y + cfg.smooth);
  return {bce, dice, cfg.lambda_bce * bce + cfg.lambda_dice * dice};
}

data::Dataset tiny_dataset(std::size_t n, std::size_t res = 32) {
  data::SyntheticSpec spec;
  spec.count = n;
  spec.resolution = res;
  data::Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    auto g = data::generate_sample(spec, i);
    out.push_back(data::make_sample(g.id, g.image, g.mask));
  }
  return out;
}

TrainConfig quick_config(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.lr = 3e-3;
  return c;
}

}  // namespace

TEST(Loss, MatchesScalarOracle) {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = random_tensor({1, 8, 8}, rng, -6.0, 6.0);
    const Tensor y = random_mask({1, 8, 8}, rng);
    LossConfig cfg;
    cfg.lambda_bce = rng.uniform(0.1, 2.0);
    cfg.lambda_dice = rng.uniform(0.1, 2.0);
    const LossParts got = bce_dice_value(logits, y, cfg), want = loss_oracle(logits, y, cfg);
    EXPECT_NEAR(got.bce, want.bce, 1e-12);
    EXPECT_NEAR(got.dice, want.dice, 1e-12);
    EXPECT_NEAR(got.total, want.total, 1e-12);
    Tape tape;
    EXPECT_NEAR(bce_dice_loss(tape.constant(logits), y, cfg).value()[0], want.total, 1e-12);
  }
}

TEST(Loss, HalfProbabilityGivesLn2) {
  Rng rng(72);
  const Tensor y = random_mask({1, 16, 16}, rng);
  EXPECT_NEAR(bce_dice_value(Tensor({1, 16, 16}), y, {}).bce, std::log(2.0), 1e-9);
}

TEST(Loss, PerfectSoftPredictionHasZeroDice) {
  Rng rng(73);
  const Tensor y = random_mask({1, 32, 32}, rng);
  Tensor logits(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) logits[i] = y[i] == 1.0 ? 50.0 : -50.0;
  const LossConfig cfg;
  const double k = std::accumulate(y.values().begin(), y.values().end(), 0.0);
  // Only the probability clamp keeps the prediction from being exactly the mask.
  const double bound = cfg.eps * static_cast<double>(y.size()) / (2.0 * k + cfg.smooth) + 1e-12;
  const LossParts parts = bce_dice_value(logits, y, cfg);
  EXPECT_GE(parts.dice, 0.0);
  EXPECT_LE(parts.dice, bound);
  EXPECT_LE(parts.bce, 2.0 * cfg.eps);
}

TEST(Loss, NonNegative) {
  Rng rng(74);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor logits = random_tensor({1, 4, 4}, rng, -20.0, 20.0);
    const LossParts parts = bce_dice_value(logits, random_mask({1, 4, 4}, rng), {});
    EXPECT_GE(parts.bce, 0.0);
    EXPECT_GE(parts.dice, 0.0);
  }
}

TEST(Loss, RejectsNonBinaryTargetAndShapeMismatch) {
  Tensor y({1, 2, 2});
  y[1] = 0.5;
  EXPECT_THROW(bce_dice_value(Tensor({1, 2, 2}), y, {}), DataError);
  EXPECT_THROW(bce_dice_value(Tensor({1, 2, 2}), Tensor({1, 2, 3}), {}), DimensionError);
  LossConfig bad;
  bad.lambda_bce = bad.lambda_dice = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(75);
  const Tensor y = random_mask({1, 6, 6}, rng);
  ParamStore p;
  p.set("logits", random_tensor({1, 6, 6}, rng, -3.0, 3.0));
  LossConfig cfg;
  cfg.lambda_bce = 0.7;
  cfg.lambda_dice = 1.3;
  const auto report = check_gradients(p, [&](const Scope& s) { return bce_dice_loss(s("logits"), y, cfg); });
  EXPECT_LE(report.max_rel_error, 1e-6);
}

TEST(Loss, ClampedPixelsHaveZeroGradient) {
  Tape tape;
  Tensor logits({1, 1, 3});
  logits[0] = 40.0;
  logits[1] = -40.0;
  logits[2] = 0.3;
  const Var x = tape.leaf(logits);
  const Gradients g = tape.backward(bce_dice_loss(x, Tensor({1, 1, 3}, std::vector<double>{0, 1, 1}), {}));
  EXPECT_EQ(g.of(x)[0], 0.0);
  EXPECT_EQ(g.of(x)[1], 0.0);
  EXPECT_NE(g.of(x)[2], 0.0);
}

TEST(Metrics, DiceIouIdentityOnRandomMasks) {
  Rng rng(76);
  for (int trial = 0; trial < 1000; ++trial) {
    const double p = rng.uniform(0.0, 0.6);
    const Tensor a = random_mask({1, 12, 12}, rng, p), b = random_mask({1, 12, 12}, rng, p);
    const OverlapCounts c = count_overlap(a, b);
    ASSERT_EQ(c.tp + c.fp + c.fn + c.tn, 144u);
    const double dsc = c.dsc(), iou = c.iou();
    if (c.tp + c.fp + c.fn == 0) {
      EXPECT_EQ(dsc, 1.0);
      EXPECT_EQ(iou, 1.0);
      continue;
    }
    // Exact in integers: 2 tp / (2 tp + fp + fn) with iou = tp / (tp + fp + fn).
    EXPECT_EQ(dsc, 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn));
    EXPECT_EQ(iou, c.tp / static_cast<double>(c.tp + c.fp + c.fn));
    EXPECT_NEAR(dsc, 2.0 * iou / (1.0 + iou), 4e-16);
  }
}

TEST(Metrics, EdgeCases) {
  const Tensor zero({1, 3, 3}), one({1, 3, 3}, 1.0);
  EXPECT_EQ(dsc_iou(zero, zero).dsc, 1.0);
  EXPECT_EQ(dsc_iou(one, one).iou, 1.0);
  EXPECT_EQ(dsc_iou(one, zero).dsc, 0.0);
  EXPECT_EQ(dsc_iou(zero, one).iou, 0.0);
  EXPECT_THROW(dsc_iou(zero, Tensor({1, 3, 2})), ContractError);
  EXPECT_THROW(dsc_iou(Tensor({1, 3, 3}, 0.5), zero), DataError);
  OverlapCounts a{1, 2, 3, 4};
  a += OverlapCounts{1, 1, 1, 1};
  EXPECT_EQ(a.tp, 2u);
  EXPECT_EQ(a.tn, 5u);
}

TEST(Metrics, BinarizeAtZeroLogit) {
  const Tensor t = binarize_logits(Tensor({4}, std::vector<double>{-1.0, 0.0, 1e-300, 2.0}));
  EXPECT_EQ(t, Tensor({4}, std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(AdamW, ThreeStepTraceMatchesScalarOracle) {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.05;
  AdamW opt(cfg);
  ParamStore p;
  p.set("w", Tensor({2}, std::vector<double>{0.8, -1.5}));
  const std::vector<std::vector<double>> grads{{0.5, -0.2}, {-0.25, 0.4}, {1.0, 0.0}};

  std::vector<double> w{0.8, -1.5}, m(2, 0.0), v(2, 0.0);
  double b1t = 1.0, b2t = 1.0;
  for (const auto& g : grads) {
    ParamStore gs;
    gs.set("w", Tensor({2}, g));
    opt.step(p, gs);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t i = 0; i < 2; ++i) {
      w[i] -= cfg.lr * cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.lr * (m[i] / (1.0 - b1t)) / (std::sqrt(v[i] / (1.0 - b2t)) + cfg.eps);
      EXPECT_NEAR(p.at("w")[i], w[i], 1e-12);
      EXPECT_NEAR(opt.first_moments().at("w")[i], m[i], 1e-15);
      EXPECT_NEAR(opt.second_moments().at("w")[i], v[i], 1e-15);
    }
  }
  EXPECT_EQ(opt.step_count(), 3u);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  // Bias correction makes the first update lr * g / (|g| + eps') = lr * sign(g).
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.eps = 1e-300;
  AdamW opt(cfg);
  ParamStore p, g;
  p.set("w", Tensor({3}, std::vector<double>{0.0, 1.0, -1.0}));
  g.set("w", Tensor({3}, std::vector<double>{3.0, -0.5, 1e-3}));
  opt.step(p, g);
  EXPECT_NEAR(p.at("w")[0], -1e-3, 1e-15);
  EXPECT_NEAR(p.at("w")[1], 1.0 + 1e-3, 1e-15);
  EXPECT_NEAR(p.at("w")[2], -1.0 - 1e-3, 1e-15);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  AdamWConfig cfg;
  cfg.lr = 0.02;
  cfg.weight_decay = 0.3;
  AdamW opt(cfg);
  Rng rng(77);
  ParamStore p;
  p.set("w", random_tensor({5}, rng));
  const Tensor start = p.at("w");
  const ParamStore zero = p.zeros_like();
  const std::size_t steps = 7;
  for (std::size_t s = 0; s < steps; ++s) opt.step(p, zero);
  const double factor = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < 5; ++i) {
    double expect = start[i];
    for (std::size_t s = 0; s < steps; ++s) expect *= factor;
    EXPECT_EQ(p.at("w")[i], expect);
    EXPECT_NEAR(p.at("w")[i], start[i] * std::pow(factor, steps), 1e-15);
  }
}

TEST(AdamW, RejectsMismatchedGradients) {
  AdamW opt(AdamWConfig{});
  ParamStore p, g;
  p.set("w", Tensor({2}));
  g.set("w", Tensor({3}));
  EXPECT_THROW(opt.step(p, g), Error);
  AdamWConfig bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Cosine, EndpointsAreExact) {
  for (const auto& [hi, lo, t] : {std::tuple{1e-3, 1e-5, 30}, std::tuple{0.37, 0.0, 7}, std::tuple{2.5, 0.1, 1}}) {
    const CosineSchedule s{hi, lo, static_cast<std::size_t>(t)};
    EXPECT_EQ(s.at(0), hi);
    EXPECT_EQ(s.at(t), lo);
  }
}

TEST(Cosine, MidpointAndMonotone) {
  const CosineSchedule s{1e-3, 1e-5, 30};
  EXPECT_NEAR(s.at(15), (1e-3 + 1e-5) / 2, 1e-18);
  for (int t = 1; t <= 30; ++t) EXPECT_LT(s.at(t), s.at(t - 1));
  for (int t = 0; t <= 30; ++t) EXPECT_NEAR(s.at(t) - s.at(15), s.at(15) - s.at(30 - t), 1e-18);
  EXPECT_THROW(s.at(-0.5), ContractError);
  EXPECT_THROW(s.at(31), ContractError);
}

TEST(Folds, HoldoutSplitSizes) {
  const auto folds = make_folds(250, TrainConfig{});
  ASSERT_EQ(folds.size(), 1u);
  EXPECT_EQ(folds[0].train.size(), 200u);
  EXPECT_EQ(folds[0].val.size(), 50u);
  std::set<std::size_t> all(folds[0].train.begin(), folds[0].train.end());
  all.insert(folds[0].val.begin(), folds[0].val.end());
  EXPECT_EQ(all.size(), 250u);
}

TEST(Folds, KFoldPartitionsData) {
  TrainConfig cfg;
  cfg.folds = 5;
  const auto folds = make_folds(23, cfg);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.val.size(), 23u);
    EXPECT_GE(f.val.size(), 4u);
    EXPECT_LE(f.val.size(), 5u);
    std::set<std::size_t> tr(f.train.begin(), f.train.end());
    for (auto v : f.val) {
      EXPECT_EQ(tr.count(v), 0u);
      seen.insert(v);
    }
  }
  EXPECT_EQ(seen.size(), 23u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 23u);
  EXPECT_EQ(make_folds(23, cfg)[2].val, folds[2].val);
  cfg.folds = 24;
  EXPECT_THROW(make_folds(23, cfg), Error);
}

TEST(Shuffle, IsSeededPermutation) {
  std::vector<std::size_t> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  Rng r1(9), r2(9);
  shuffle_indices(a, r1);
  shuffle_indices(b, r2);
  EXPECT_EQ(a, b);
  std::vector<std::size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(EpochLog, JsonKeysInOrder) {
  const EpochRecord r{2, 3, 0.5, 0.75, 0.6, 1e-4};
  EXPECT_EQ(r.to_json(), R"({"fold":2,"epoch":3,"train_loss":0.5,"val_dsc":0.75,"val_iou":0.6,"lr":0.0001})");
  const auto j = nlohmann::json::parse(r.to_json());
  EXPECT_EQ(j.at("lr").get<double>(), 1e-4);
}

TEST(Training, ZeroLearningRateKeepsWeights) {
  const auto model = net::ModelConfig::toy();
  const auto data = tiny_dataset(4);
  ParamStore w = net::init_model(model, 1);
  const ParamStore start = w;
  AdamWConfig cfg;
  cfg.lr = 0.0;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  const std::vector<std::size_t> batch{0, 1, 2, 3};
  const double loss = train_step(w, opt, model, data, batch, {});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(w, start);
}

TEST(Training, BatchLossIsMeanOfSampleLosses) {
  const auto model = net::ModelConfig::toy();
  const auto data = tiny_dataset(3);
  const ParamStore w = net::init_model(model, 1);
  double mean = 0.0;
  for (const auto& s : data) mean += bce_dice_value(net::infer_logits(w, model, s.image), s.mask, {}).total / 3.0;
  ParamStore copy = w;
  AdamWConfig cfg;
  cfg.lr = 0.0;
  AdamW opt(cfg);
  const std::vector<std::size_t> batch{0, 1, 2};
  EXPECT_NEAR(train_step(copy, opt, model, data, batch, {}), mean, 1e-12);
}

TEST(Training, NonFiniteLossNamesSamples) {
  const auto model = net::ModelConfig::toy();
  const auto data = tiny_dataset(2);
  ParamStore w = net::init_model(model, 1);
  w.at("dec.head.bias")[0] = std::nan("");
  AdamW opt(AdamWConfig{});
  const std::vector<std::size_t> batch{0, 1};
  try {
    train_step(w, opt, model, data, batch, {});
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("s00000"), std::string::npos) << e.what();
  }
}

TEST(Training, RejectsDataThatDoesNotMatchModel) {
  EXPECT_THROW(train::train(net::ModelConfig::toy(), quick_config(1), tiny_dataset(5, 64)), ConfigError);
}

TEST(Training, RepeatedRunsAreIdenticalAndLogIsComplete) {
  const auto model = net::ModelConfig::toy();
  const auto data = tiny_dataset(10);
  const auto cfg = quick_config(3);
  std::vector<std::string> streamed;
  const TrainResult a = train::train(model, cfg, data, [&](const EpochRecord& r) { streamed.push_back(r.to_json()); });
  const TrainResult b = train::train(model, cfg, data);
  ASSERT_EQ(a.log.size(), 3u);
  ASSERT_EQ(streamed.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.log[e].to_json(), b.log[e].to_json());
    EXPECT_EQ(a.log[e].to_json(), streamed[e]);
    EXPECT_EQ(a.log[e].epoch, e + 1);
    EXPECT_EQ(a.log[e].lr, cfg.schedule().at(static_cast<double>(e)));
  }
  EXPECT_EQ(a.best_weights(), b.best_weights());
  const auto& f = a.folds[0];
  EXPECT_EQ(f.best_dsc, a.log[f.best_epoch - 1].val_dsc);
  for (const auto& r : a.log) EXPECT_LE(r.val_dsc, f.best_dsc);
}

TEST(Training, KFoldAveragesBestScores) {
  const auto model = net::ModelConfig::toy();
  auto cfg = quick_config(1);
  cfg.folds = 3;
  const TrainResult r = train::train(model, cfg, tiny_dataset(9));
  ASSERT_EQ(r.folds.size(), 3u);
  ASSERT_EQ(r.log.size(), 3u);
  double mean = 0.0;
  for (const auto& f : r.folds) mean += f.best_dsc / 3.0;
  EXPECT_NEAR(r.mean_dsc, mean, 1e-15);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(r.log[k].fold, k);
}

TEST(Ablation, LatticeAndTable) {
  const auto base = net::ModelConfig::toy();
  const auto lattice = ablation_lattice(base);
  ASSERT_EQ(lattice.size(), 4u);
  EXPECT_FALSE(lattice[0].use_slstm || lattice[0].use_mlstm);
  EXPECT_TRUE(lattice[1].use_slstm && !lattice[1].use_mlstm);
  EXPECT_TRUE(!lattice[2].use_slstm && lattice[2].use_mlstm);
  EXPECT_TRUE(lattice[3].use_slstm && lattice[3].use_mlstm);

  const auto data = tiny_dataset(6);
  const auto cfg = quick_config(1);
  const auto rows = ablate(base, cfg, data);
  ASSERT_EQ(rows.size(), 4u);
  std::set<std::string> hashes;
  for (const auto& r : rows) hashes.insert(r.config_hash);
  EXPECT_EQ(hashes.size(), 4u);

  // Ver 1 is the plain run with both blocks off.
  const TrainResult plain = train::train(lattice[0], cfg, data);
  EXPECT_EQ(rows[0].result.log[0].to_json(), plain.log[0].to_json());

  const std::string table = ablation_table(rows);
  std::vector<std::string> lines;
  std::stringstream ss(table);
  for (std::string line; std::getline(ss, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[1].rfind("Ver 1", 0), 0u);
  // Every row token starts at its header column.
  for (const char* head : {"sLSTM", "mLSTM", "DSC", "IoU", "Config"}) {
    const auto col = lines[0].find(head);
    ASSERT_NE(col, std::string::npos);
    for (std::size_t i = 1; i < 5; ++i) {
      EXPECT_EQ(lines[i][col - 1], ' ') << lines[i];
      EXPECT_NE(lines[i][col], ' ') << lines[i];
    }
  }
  EXPECT_NE(lines[4].find(rows[3].config_hash), std::string::npos);
}
