#include "xvmunet/network.hpp"

#include "xvmunet/errors.hpp"
#include "xvmunet/ops.hpp"
#include "xvmunet/vss.hpp"
#include "xvmunet/xlstm.hpp"

namespace xvmunet::net {

namespace {

constexpr std::size_t kPatch = 4;

std::string stage_name(const char* side, std::size_t s) { return std::string(side) + ".stage" + std::to_string(s); }

vss::VSSConfig vss_config(const ModelConfig& cfg, std::size_t channels) {
  vss::VSSConfig v;
  v.channels = channels;
  v.d_state = cfg.d_state;
  v.expand = cfg.expand;
  v.share_projections = cfg.share_ss2d_projections;
  v.discretization = cfg.discretization;
  return v;
}

xlstm::SLSTMConfig slstm_config(const ModelConfig& cfg) {
  return xlstm::SLSTMConfig{cfg.widths.back(), cfg.slstm_heads, cfg.proj_factor};
}

xlstm::MLSTMConfig mlstm_config(const ModelConfig& cfg) {
  return xlstm::MLSTMConfig{cfg.widths.back(), 0, cfg.proj_factor};
}

Var vss_stack(const Scope& stage, const ModelConfig& cfg, std::size_t channels, std::size_t depth, Var f) {
  const auto vcfg = vss_config(cfg, channels);
  for (std::size_t b = 0; b < depth; ++b) f = vss::vss_block(stage.sub("block" + std::to_string(b)), vcfg, f);
  return f;
}

}  // namespace

std::size_t ModelConfig::reduction() const {
  std::size_t r = kPatch;
  for (std::size_t s = 1; s < widths.size(); ++s) r *= 2;
  return r;
}

void ModelConfig::validate() const {
  if (widths.empty()) throw ConfigError("model needs at least one stage width");
  if (depths.size() != widths.size()) {
    throw ConfigError("depths has " + std::to_string(depths.size()) + " entries but widths has " +
                      std::to_string(widths.size()));
  }
  for (auto w : widths) {
    if (w == 0) throw ConfigError("stage widths must be positive");
  }
  if (in_channels == 0 || d_state == 0 || expand == 0 || slstm_heads == 0) {
    throw ConfigError("in_channels, d_state, expand and slstm_heads must be positive");
  }
  if (!(proj_factor > 0.0)) throw ConfigError("proj_factor must be positive");
  const std::size_t r = reduction();
  if (height == 0 || width == 0 || height % r != 0 || width % r != 0) {
    throw ConfigError("resolution " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by " + std::to_string(r) + " (patch 4 and " +
                      std::to_string(widths.size() - 1) + " downsamplings)");
  }
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.height = 32;
  c.width = 32;
  c.widths = {8, 16};
  c.depths = {1, 1};
  c.d_state = 4;
  return c;
}

ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore p;
  const auto& w = cfg.widths;
  const std::size_t stages = cfg.stages();

  init_kaiming(p, "enc.embed.weight", {w[0], cfg.in_channels, kPatch, kPatch}, cfg.in_channels * kPatch * kPatch,
               seed);
  init_constant(p, "enc.embed.bias", {w[0]}, 0.0);
  for (std::size_t s = 0; s < stages; ++s) {
    const std::string stage = stage_name("enc", s);
    if (s > 0) {
      init_kaiming(p, stage + ".down.weight", {w[s], w[s - 1], 2, 2}, w[s - 1] * 4, seed);
      init_constant(p, stage + ".down.bias", {w[s]}, 0.0);
    }
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      vss::init_vss_block(p, stage + ".block" + std::to_string(b), vss_config(cfg, w[s]), seed);
    }
  }

  const std::size_t d = w.back();
  for (const char* g : {"i", "f", "o", "g"}) {
    init_kaiming(p, std::string("bottleneck.lstm.w_") + g, {d, d}, d, seed);
    init_kaiming(p, std::string("bottleneck.lstm.u_") + g, {d, d}, d, seed);
    init_constant(p, std::string("bottleneck.lstm.b_") + g, {d}, 0.0);
  }
  if (cfg.use_slstm) xlstm::init_slstm(p, "bottleneck.slstm", slstm_config(cfg), seed);
  if (cfg.use_mlstm) xlstm::init_mlstm(p, "bottleneck.mlstm", mlstm_config(cfg), seed);
  if (cfg.fusion == FusionMode::Learnable) {
    init_constant(p, "fusion.alpha", {1}, 0.5);
    init_constant(p, "fusion.beta", {1}, 0.5);
  }

  for (std::size_t s = stages - 1; s-- > 0;) {
    const std::string stage = stage_name("dec", s);
    init_kaiming(p, stage + ".up.weight", {w[s + 1], w[s], 2, 2}, w[s + 1], seed);
    init_constant(p, stage + ".up.bias", {w[s]}, 0.0);
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      vss::init_vss_block(p, stage + ".block" + std::to_string(b), vss_config(cfg, w[s]), seed);
    }
  }
  init_kaiming(p, "dec.head.weight", {w[0], 1, kPatch, kPatch}, w[0], seed);
  init_constant(p, "dec.head.bias", {1}, 0.0);
  return p;
}

EncoderOutput vssm_encode(const Scope& scope, const ModelConfig& cfg, const Var& x) {
  if (x.shape() != Shape{cfg.in_channels, cfg.height, cfg.width}) {
    throw ConfigError("input " + shape_str(x.shape()) + " does not match configured resolution " +
                      shape_str({cfg.in_channels, cfg.height, cfg.width}));
  }
  cfg.validate();
  const Scope enc = scope.sub("enc");
  Var f = ops::relu(ops::add_channel_bias(ops::conv2d(x, enc("embed.weight"), kPatch), enc("embed.bias")));
  f = ops::chw_to_hwc(f);
  EncoderOutput out;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const Scope stage = scope.sub(stage_name("enc", s));
    if (s > 0) {
      Var c = ops::conv2d(ops::hwc_to_chw(f), stage("down.weight"), 2);
      f = ops::chw_to_hwc(ops::relu(ops::add_channel_bias(c, stage("down.bias"))));
    }
    f = vss_stack(stage, cfg, cfg.widths[s], cfg.depths[s], f);
    if (s + 1 < cfg.stages()) out.skips.push_back(f);
  }
  out.bottleneck = f;
  return out;
}

Var to_sequence(const Var& f) {
  if (f.shape().size() != 3) throw DimensionError("to_sequence: expected [h, w, C], got " + shape_str(f.shape()));
  return ops::reshape(f, {f.shape()[0] * f.shape()[1], f.shape()[2]});
}

Var from_sequence(const Var& seq, std::size_t height, std::size_t width) {
  if (seq.shape().size() != 2 || seq.shape()[0] != height * width) {
    throw ContractError("from_sequence: " + shape_str(seq.shape()) + " cannot fill a " + std::to_string(height) +
                        "x" + std::to_string(width) + " map");
  }
  return ops::reshape(seq, {height, width, seq.shape()[1]});
}

Var lstm_pass(const Scope& scope, const Var& seq) {
  if (seq.shape().size() != 2) throw DimensionError("lstm_pass: expected [L, D], got " + shape_str(seq.shape()));
  const std::size_t len = seq.shape()[0], d = seq.shape()[1];
  struct Gate {
    Var input;  // W F_t + b for all t
    Var u;
  };
  auto gate = [&](const char* g) {
    const std::string s(g);
    return Gate{ops::add_bias(ops::matmul(seq, scope("w_" + s)), scope("b_" + s)), scope("u_" + s)};
  };
  const Gate gi = gate("i"), gf = gate("f"), go = gate("o"), gg = gate("g");
  Var h = scope.tape().constant(Tensor({1, d}));
  Var c = scope.tape().constant(Tensor({1, d}));
  std::vector<Var> hidden;
  hidden.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    auto pre = [&](const Gate& g) { return ops::add(ops::slice0(g.input, t, t + 1), ops::matmul(h, g.u)); };
    const Var i = ops::sigmoid(pre(gi));
    const Var f = ops::sigmoid(pre(gf));
    const Var o = ops::sigmoid(pre(go));
    const Var g = ops::tanh(pre(gg));
    c = ops::add(ops::mul(f, c), ops::mul(i, g));
    h = ops::mul(o, ops::tanh(c));
    hidden.push_back(h);
  }
  return ops::concat0(hidden);
}

Var xlstm_bottleneck(const Scope& scope, const ModelConfig& cfg, const Var& f) {
  const std::size_t d = cfg.widths.back();
  if (f.shape().size() != 3 || f.shape()[2] != d) {
    throw DimensionError("xlstm_bottleneck: expected [h, w, " + std::to_string(d) + "], got " + shape_str(f.shape()));
  }
  const Scope bn = scope.sub("bottleneck");
  Var seq = lstm_pass(bn.sub("lstm"), to_sequence(f));
  if (cfg.use_slstm) seq = xlstm::slstm_block(bn.sub("slstm"), slstm_config(cfg), seq);
  if (cfg.use_mlstm) seq = xlstm::mlstm_block(bn.sub("mlstm"), mlstm_config(cfg), seq);
  return from_sequence(seq, f.shape()[0], f.shape()[1]);
}

Var fuse(const Var& f, const Var& h, const Var& alpha, const Var& beta) {
  if (f.shape() != h.shape()) {
    throw ContractError("fuse: feature map " + shape_str(f.shape()) + " and xLSTM map " + shape_str(h.shape()) +
                        " differ");
  }
  return ops::add(ops::scale_by(f, alpha), ops::scale_by(h, beta));
}

Var vssm_decode(const Scope& scope, const ModelConfig& cfg, const Var& fused, std::span<const Var> skips) {
  const std::size_t stages = cfg.stages();
  if (skips.size() + 1 != stages) {
    throw ContractError("vssm_decode: expected " + std::to_string(stages - 1) + " skip maps, got " +
                        std::to_string(skips.size()));
  }
  Var f = fused;
  for (std::size_t s = stages - 1; s-- > 0;) {
    const Scope stage = scope.sub(stage_name("dec", s));
    Var up = ops::conv_transpose2d(ops::hwc_to_chw(f), stage("up.weight"), 2);
    up = ops::chw_to_hwc(ops::add_channel_bias(up, stage("up.bias")));
    if (up.shape() != skips[s].shape()) {
      throw ContractError("vssm_decode: upsampled " + shape_str(up.shape()) + " does not match skip " +
                          shape_str(skips[s].shape()));
    }
    f = vss_stack(stage, cfg, cfg.widths[s], cfg.depths[s], ops::add(up, skips[s]));
  }
  const Scope head = scope.sub("dec.head");
  return ops::add_channel_bias(ops::conv_transpose2d(ops::hwc_to_chw(f), head("weight"), kPatch), head("bias"));
}

Var forward(const Scope& scope, const ModelConfig& cfg, const Var& x) {
  const EncoderOutput enc = vssm_encode(scope, cfg, x);
  const Var h = xlstm_bottleneck(scope, cfg, enc.bottleneck);
  Var alpha, beta;
  if (cfg.fusion == FusionMode::Learnable) {
    alpha = scope("fusion.alpha");
    beta = scope("fusion.beta");
  } else {
    alpha = scope.tape().constant(Tensor::scalar(0.5));
    beta = scope.tape().constant(Tensor::scalar(0.5));
  }
  const Var fused = fuse(enc.bottleneck, h, alpha, beta);
  return vssm_decode(scope, cfg, fused, enc.skips);
}

Tensor infer_logits(const ParamStore& weights, const ModelConfig& cfg, const Tensor& image) {
  Tape tape;
  Binder binder(tape, weights, false);
  return forward(Scope(binder), cfg, tape.constant(image)).value();
}

}  // namespace xvmunet::net
