#include "xvmunet/vss.hpp"

#include <algorithm>

#include "xvmunet/errors.hpp"
#include "xvmunet/ops.hpp"

namespace xvmunet::vss {

std::vector<std::size_t> scan_order(Direction dir, std::size_t height, std::size_t width) {
  std::vector<std::size_t> order;
  order.reserve(height * width);
  const bool column = dir == Direction::ColMajor || dir == Direction::ColMajorReversed;
  if (column) {
    for (std::size_t c = 0; c < width; ++c)
      for (std::size_t r = 0; r < height; ++r) order.push_back(r * width + c);
  } else {
    for (std::size_t i = 0; i < height * width; ++i) order.push_back(i);
  }
  if (dir == Direction::RowMajorReversed || dir == Direction::ColMajorReversed) {
    std::reverse(order.begin(), order.end());
  }
  return order;
}

std::vector<std::size_t> inverse_order(std::span<const std::size_t> order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv[order[i]] = i;
  return inv;
}

DirectionalSequences scan_expand(const Tensor& f) {
  if (f.rank() != 3) throw DimensionError("scan_expand: expected [C, H, W], got " + shape_str(f.shape()));
  const std::size_t ch = f.dim(0), h = f.dim(1), w = f.dim(2), len = h * w;
  DirectionalSequences out;
  out.height = h;
  out.width = w;
  for (Direction dir : kDirections) {
    const auto order = scan_order(dir, h, w);
    Tensor seq({ch, len});
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < len; ++i) seq[c * len + i] = f[c * len + order[i]];
    out.seqs[static_cast<std::size_t>(dir)] = std::move(seq);
  }
  return out;
}

Tensor scan_merge(const DirectionalSequences& seqs) {
  const std::size_t len = seqs.height * seqs.width;
  const std::size_t ch = seqs.seqs[0].empty() ? 0 : seqs.seqs[0].dim(0);
  for (const auto& s : seqs.seqs) {
    if (s.rank() != 2 || s.dim(0) != ch || s.dim(1) != len) {
      throw ContractError("scan_merge: every direction needs shape [" + std::to_string(ch) + "x" +
                          std::to_string(len) + "], got " + shape_str(s.shape()));
    }
  }
  // Pairwise: (row + col) + (row reversed + col reversed).
  std::array<Tensor, 2> half{Tensor({ch, seqs.height, seqs.width}), Tensor({ch, seqs.height, seqs.width})};
  for (Direction dir : kDirections) {
    const auto k = static_cast<std::size_t>(dir);
    const auto order = scan_order(dir, seqs.height, seqs.width);
    const Tensor& s = seqs.seqs[k];
    Tensor& acc = half[k / 2];
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < len; ++i) acc[c * len + order[i]] += s[c * len + i];
  }
  Tensor out = half[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += half[1][i];
  return out;
}

namespace {

std::string projection_scope(const VSSConfig& cfg, Direction dir) {
  if (cfg.share_projections) return "ss2d.shared";
  return "ss2d.dir" + std::to_string(static_cast<std::size_t>(dir));
}

void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed) {
  init_kaiming(store, join_name(prefix, "weight"), {in, out}, in, seed);
  init_constant(store, join_name(prefix, "bias"), {out}, 0.0);
}

Var linear(const Scope& scope, const Var& x) { return ops::add_bias(ops::matmul(x, scope("weight")), scope("bias")); }

}  // namespace

void init_vss_block(ParamStore& store, const std::string& prefix, const VSSConfig& cfg, std::uint64_t seed) {
  if (cfg.channels == 0 || cfg.expand == 0 || cfg.d_state == 0) throw ConfigError("VSS block needs positive extents");
  const std::size_t c = cfg.channels, e = cfg.inner();
  init_constant(store, join_name(prefix, "norm.gamma"), {c}, 1.0);
  init_constant(store, join_name(prefix, "norm.beta"), {c}, 0.0);
  init_linear(store, join_name(prefix, "in_gate"), c, e, seed);
  init_linear(store, join_name(prefix, "in_scan"), c, e, seed);
  init_kaiming(store, join_name(prefix, "dwconv.weight"), {e, 1, 3, 3}, 9, seed);
  init_constant(store, join_name(prefix, "dwconv.bias"), {e}, 0.0);
  ssm::init_a_log(store, join_name(prefix, "ss2d.a_log"), e, cfg.d_state);
  if (cfg.share_projections) {
    ssm::init_projections(store, join_name(prefix, "ss2d.shared"), e, cfg.d_state, seed);
  } else {
    for (Direction dir : kDirections) {
      ssm::init_projections(store, join_name(prefix, projection_scope(cfg, dir)), e, cfg.d_state, seed);
    }
  }
  init_constant(store, join_name(prefix, "out_norm.gamma"), {e}, 1.0);
  init_constant(store, join_name(prefix, "out_norm.beta"), {e}, 0.0);
  init_linear(store, join_name(prefix, "out_proj"), e, c, seed);
}

Var ss2d(const Scope& scope, const VSSConfig& cfg, const Var& x, std::size_t height, std::size_t width) {
  if (x.shape() != Shape{height * width, cfg.inner()}) {
    throw DimensionError("ss2d: expected [" + std::to_string(height * width) + "x" + std::to_string(cfg.inner()) +
                         "], got " + shape_str(x.shape()));
  }
  const Var a_log = cfg.core == ScanCore::Selective ? scope("ss2d.a_log") : Var{};
  std::array<Var, 4> back;
  for (Direction dir : kDirections) {
    const auto order = scan_order(dir, height, width);
    const Var seq = ops::gather_rows(x, order);
    Var y = seq;
    if (cfg.core == ScanCore::Selective) {
      const auto proj = ssm::SelectiveProjections::bind(scope.sub(projection_scope(cfg, dir)));
      y = ssm::selective_scan(proj, a_log, seq, cfg.discretization);
    }
    back[static_cast<std::size_t>(dir)] = ops::gather_rows(y, inverse_order(order));
  }
  return ops::add(ops::add(back[0], back[1]), ops::add(back[2], back[3]));
}

Var vss_block(const Scope& scope, const VSSConfig& cfg, const Var& x) {
  if (x.shape().size() != 3 || x.shape()[2] != cfg.channels) {
    throw DimensionError("vss_block: expected [H, W, " + std::to_string(cfg.channels) + "], got " +
                         shape_str(x.shape()));
  }
  const std::size_t h = x.shape()[0], w = x.shape()[1], c = cfg.channels, e = cfg.inner();
  const Var normed = ops::reshape(ops::layernorm(x, scope("norm.gamma"), scope("norm.beta")), {h * w, c});

  const Var gate = ops::silu(linear(scope.sub("in_gate"), normed));

  Var u = ops::hwc_to_chw(ops::reshape(linear(scope.sub("in_scan"), normed), {h, w, e}));
  u = ops::add_channel_bias(ops::conv2d(u, scope("dwconv.weight"), 1, 1, e), scope("dwconv.bias"));
  u = ops::reshape(ops::silu(ops::chw_to_hwc(u)), {h * w, e});

  Var s = ss2d(scope, cfg, u, h, w);
  s = ops::layernorm(s, scope("out_norm.gamma"), scope("out_norm.beta"));

  const Var out = linear(scope.sub("out_proj"), ops::mul(s, gate));
  return ops::add(x, ops::reshape(out, {h, w, c}));
}

}  // namespace xvmunet::vss
