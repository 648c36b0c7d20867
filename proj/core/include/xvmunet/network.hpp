#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xvmunet/params.hpp"
#include "xvmunet/ssm.hpp"

namespace xvmunet::net {

enum class FusionMode {
  Learnable,  // alpha, beta are trained scalars initialized to 0.5
  Fixed,      // alpha = beta = 0.5, not trained
};

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t in_channels = 1;
  // One entry per stage; the last stage is the bottleneck.
  std::vector<std::size_t> widths{16, 32, 64, 128};
  // VSS blocks per stage, used in the encoder and the matching decoder stage.
  std::vector<std::size_t> depths{1, 1, 1, 1};
  std::size_t d_state = 8;
  std::size_t expand = 2;
  bool use_slstm = true;
  bool use_mlstm = true;
  FusionMode fusion = FusionMode::Learnable;
  bool share_ss2d_projections = false;
  std::size_t slstm_heads = 4;
  double proj_factor = 4.0 / 3.0;
  ssm::Discretization discretization = ssm::Discretization::ExactZoh;

  std::size_t stages() const { return widths.size(); }
  // Input extent per bottleneck cell: 4 (patch embedding) * 2^(stages - 1).
  std::size_t reduction() const;
  std::size_t bottleneck_height() const { return height / reduction(); }
  std::size_t bottleneck_width() const { return width / reduction(); }
  // Throws ConfigError naming the first violated constraint.
  void validate() const;

  // 64x64, widths [16, 32, 64, 128], N = 8, one VSS block per stage.
  static ModelConfig desk();
  // 32x32, widths [8, 16]; used by gradient checks.
  static ModelConfig toy();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named weights for every parameter the config uses. Initial values depend only
// on (seed, parameter name).
ParamStore init_model(const ModelConfig& cfg, std::uint64_t seed);

struct EncoderOutput {
  std::vector<Var> skips;  // channel-last maps of stages 0 .. stages-2
  Var bottleneck;          // channel-last map of the last stage
};

// x: [C_in, H, W]. Patch embedding (4x4, stride 4, ReLU), then per stage an
// optional 2x2 stride-2 downsampling conv with ReLU followed by VSS blocks.
EncoderOutput vssm_encode(const Scope& scope, const ModelConfig& cfg, const Var& x);

// [h, w, C] <-> [h*w, C], row-major.
Var to_sequence(const Var& f);
Var from_sequence(const Var& seq, std::size_t height, std::size_t width);

// Gated recurrence over seq [L, D]:
//   i, f, o = sigmoid(W F_t + U h_{t-1} + b), g = tanh(...)
//   c_t = f c_{t-1} + i g, h_t = o tanh(c_t)
Var lstm_pass(const Scope& scope, const Var& seq);

// LSTM pass, then the optional sLSTM block, then the optional mLSTM block.
Var xlstm_bottleneck(const Scope& scope, const ModelConfig& cfg, const Var& f);

// alpha * f + beta * h; alpha and beta are single-element Vars.
Var fuse(const Var& f, const Var& h, const Var& alpha, const Var& beta);

// Per stage from deep to shallow: 2x transposed-conv upsampling, additive skip,
// VSS blocks; then a 4x4 stride-4 transposed conv to one logit channel [1, H, W].
Var vssm_decode(const Scope& scope, const ModelConfig& cfg, const Var& fused, std::span<const Var> skips);

// encode -> xlstm_bottleneck -> fuse -> decode.
Var forward(const Scope& scope, const ModelConfig& cfg, const Var& x);

// Tape-free convenience for inference: logits [1, H, W].
Tensor infer_logits(const ParamStore& weights, const ModelConfig& cfg, const Tensor& image);

}  // namespace xvmunet::net
