#include "xvmunet/xlstm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "xvmunet/errors.hpp"
#include "xvmunet/ops.hpp"

namespace xvmunet::xlstm {

namespace {

constexpr double kNormalizerFloor = 1e-8;

std::size_t scaled_dim(double factor, std::size_t d) {
  return static_cast<std::size_t>(std::ceil(factor * static_cast<double>(d) - 1e-9));
}

void init_projection_wrapper(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t up,
                             std::size_t d_out, std::uint64_t seed) {
  init_kaiming(store, join_name(prefix, "up_left"), {d_in, up}, d_in, seed);
  init_kaiming(store, join_name(prefix, "up_right"), {d_in, up}, d_in, seed);
  init_kaiming(store, join_name(prefix, "down"), {up, d_out}, up, seed);
}

void require_row(const char* who, const Var& x, std::size_t d) {
  if (x.shape() != Shape{1, d}) {
    throw DimensionError(std::string(who) + ": expected [1x" + std::to_string(d) + "], got " + shape_str(x.shape()));
  }
}

void require_seq(const char* who, const Var& x, std::size_t d) {
  if (x.shape().size() != 2 || x.shape()[1] != d) {
    throw DimensionError(std::string(who) + ": expected [L x " + std::to_string(d) + "], got " + shape_str(x.shape()));
  }
}

// sLSTM parameters bound once per sequence, recurrent maps already masked.
struct SLSTMWeights {
  Var w_z, w_i, w_f, w_o;
  Var r_z, r_i, r_f, r_o;
  Var b_z, b_i, b_f, b_o;

  static SLSTMWeights bind(const Scope& s, const SLSTMConfig& cfg) {
    const Var mask = s.tape().constant(block_diagonal_mask(cfg.dim, cfg.heads));
    auto masked = [&](const char* name) { return ops::mul(s(name), mask); };
    return SLSTMWeights{s("w_z"),    s("w_i"),    s("w_f"),    s("w_o"), masked("r_z"), masked("r_i"),
                        masked("r_f"), masked("r_o"), s("b_z"), s("b_i"), s("b_f"), s("b_o")};
  }
};

// Input contributions W x_t for each gate, [1, D] each.
struct GateInputs {
  Var z, i, f, o;
};

SLSTMState slstm_step_impl(const SLSTMWeights& w, const SLSTMState& s, const GateInputs& in) {
  auto pre = [&](const Var& x_part, const Var& r, const Var& b) {
    return ops::add_bias(ops::add(x_part, ops::matmul(s.h, r)), b);
  };
  const Var z = ops::tanh(pre(in.z, w.r_z, w.b_z));
  const Var i = ops::sigmoid(pre(in.i, w.r_i, w.b_i));
  const Var f = ops::sigmoid(pre(in.f, w.r_f, w.b_f));
  const Var o = ops::sigmoid(pre(in.o, w.r_o, w.b_o));
  SLSTMState next;
  next.c = ops::add(ops::mul(f, s.c), ops::mul(i, z));
  next.n = ops::add(ops::mul(f, s.n), i);
  next.h = ops::mul(o, ops::div(next.c, ops::clamp_min(next.n, kNormalizerFloor)));
  return next;
}

struct MLSTMWeights {
  Var w_q, w_k, w_v, b_q, b_k, b_v;
  Var w_i, b_i, w_f, b_f, w_o, b_o;

  static MLSTMWeights bind(const Scope& s) {
    return MLSTMWeights{s("w_q"), s("w_k"), s("w_v"), s("b_q"), s("b_k"), s("b_v"),
                        s("w_i"), s("b_i"), s("w_f"), s("b_f"), s("w_o"), s("b_o")};
  }
};

MLSTMState mlstm_step_impl(const MLSTMWeights& w, std::size_t d, const MLSTMState& s, const Var& x_t) {
  const Var q = ops::add_bias(ops::matmul(x_t, w.w_q), w.b_q);
  const Var k = ops::add_bias(ops::scale(ops::matmul(x_t, w.w_k), 1.0 / std::sqrt(static_cast<double>(d))), w.b_k);
  const Var v = ops::add_bias(ops::matmul(x_t, w.w_v), w.b_v);
  const Var i = ops::sigmoid(ops::add_bias(ops::matmul(x_t, w.w_i), w.b_i));
  const Var f = ops::sigmoid(ops::add_bias(ops::matmul(x_t, w.w_f), w.b_f));
  const Var o = ops::sigmoid(ops::add_bias(ops::matmul(x_t, w.w_o), w.b_o));

  MLSTMState next;
  next.c = ops::add(ops::scale_by(s.c, f), ops::scale_by(ops::matmul(ops::transpose(v), k), i));
  next.n = ops::add(ops::scale_by(s.n, f), ops::scale_by(k, i));
  const Var retrieved = ops::matmul(q, ops::transpose(next.c));  // (C q)^T
  const Var denom = ops::clamp_min(ops::abs(ops::matmul(next.n, ops::transpose(q))), 1.0);
  next.h = ops::mul(o, ops::div_by(retrieved, denom));
  return next;
}

}  // namespace

std::size_t SLSTMConfig::up_dim() const { return scaled_dim(proj_factor, dim); }
std::size_t MLSTMConfig::up_dim() const { return scaled_dim(proj_factor, d()); }

Tensor block_diagonal_mask(std::size_t dim, std::size_t heads) {
  if (dim == 0) throw ConfigError("block_diagonal_mask: dim must be positive");
  heads = std::clamp<std::size_t>(heads, 1, dim);
  std::vector<std::size_t> block(dim);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * dim / heads, hi = (h + 1) * dim / heads;
    for (std::size_t j = lo; j < hi; ++j) block[j] = h;
  }
  Tensor mask({dim, dim});
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c) mask[r * dim + c] = block[r] == block[c] ? 1.0 : 0.0;
  return mask;
}

Var up_down_projection(const Scope& scope, const Var& h) {
  const Var left = ops::matmul(h, scope("up_left"));
  const Var right = ops::gelu(ops::matmul(h, scope("up_right")));
  return ops::matmul(ops::mul(left, right), scope("down"));
}

SLSTMState slstm_zero_state(Tape& tape, std::size_t dim) {
  return SLSTMState{tape.constant(Tensor({1, dim})), tape.constant(Tensor({1, dim})), tape.constant(Tensor({1, dim}))};
}

void init_slstm(ParamStore& store, const std::string& prefix, const SLSTMConfig& cfg, std::uint64_t seed) {
  const std::size_t d = cfg.dim;
  if (d == 0) throw ConfigError("sLSTM dim must be positive");
  const std::size_t block = std::max<std::size_t>(1, d / std::clamp<std::size_t>(cfg.heads, 1, d));
  const Tensor mask = block_diagonal_mask(d, cfg.heads);
  for (const char* g : {"z", "i", "f", "o"}) {
    init_kaiming(store, join_name(prefix, std::string("w_") + g), {d, d}, d, seed);
    const std::string r_name = join_name(prefix, std::string("r_") + g);
    init_kaiming(store, r_name, {d, d}, block, seed);
    Tensor& r = store.at(r_name);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] *= mask[k];
    init_constant(store, join_name(prefix, std::string("b_") + g), {d}, 0.0);
  }
  init_projection_wrapper(store, prefix, d, cfg.up_dim(), d, seed);
}

SLSTMState slstm_step(const Scope& scope, const SLSTMConfig& cfg, const SLSTMState& state, const Var& x_t) {
  require_row("slstm_step", x_t, cfg.dim);
  require_row("slstm_step", state.h, cfg.dim);
  const SLSTMWeights w = SLSTMWeights::bind(scope, cfg);
  const GateInputs in{ops::matmul(x_t, w.w_z), ops::matmul(x_t, w.w_i), ops::matmul(x_t, w.w_f),
                      ops::matmul(x_t, w.w_o)};
  return slstm_step_impl(w, state, in);
}

Var slstm_block(const Scope& scope, const SLSTMConfig& cfg, const Var& x) {
  require_seq("slstm_block", x, cfg.dim);
  const std::size_t len = x.shape()[0];
  const SLSTMWeights w = SLSTMWeights::bind(scope, cfg);
  const Var xz = ops::matmul(x, w.w_z), xi = ops::matmul(x, w.w_i), xf = ops::matmul(x, w.w_f),
            xo = ops::matmul(x, w.w_o);
  SLSTMState state = slstm_zero_state(scope.tape(), cfg.dim);
  std::vector<Var> hidden;
  hidden.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    const GateInputs in{ops::slice0(xz, t, t + 1), ops::slice0(xi, t, t + 1), ops::slice0(xf, t, t + 1),
                        ops::slice0(xo, t, t + 1)};
    state = slstm_step_impl(w, state, in);
    hidden.push_back(state.h);
  }
  return ops::add(x, up_down_projection(scope, ops::concat0(hidden)));
}

MLSTMState mlstm_zero_state(Tape& tape, std::size_t d) {
  return MLSTMState{tape.constant(Tensor({d, d})), tape.constant(Tensor({1, d})), tape.constant(Tensor({1, d}))};
}

void init_mlstm(ParamStore& store, const std::string& prefix, const MLSTMConfig& cfg, std::uint64_t seed) {
  const std::size_t dm = cfg.dim, d = cfg.d();
  if (dm == 0) throw ConfigError("mLSTM dim must be positive");
  for (const char* m : {"q", "k", "v", "o"}) {
    init_kaiming(store, join_name(prefix, std::string("w_") + m), {dm, d}, dm, seed);
    init_constant(store, join_name(prefix, std::string("b_") + m), {d}, 0.0);
  }
  for (const char* g : {"i", "f"}) {
    init_kaiming(store, join_name(prefix, std::string("w_") + g), {dm, 1}, dm, seed);
    init_constant(store, join_name(prefix, std::string("b_") + g), {1}, 0.0);
  }
  init_projection_wrapper(store, prefix, d, cfg.up_dim(), dm, seed);
}

MLSTMState mlstm_step(const Scope& scope, const MLSTMConfig& cfg, const MLSTMState& state, const Var& x_t) {
  require_row("mlstm_step", x_t, cfg.dim);
  if (state.c.shape() != Shape{cfg.d(), cfg.d()}) throw DimensionError("mlstm_step: memory shape mismatch");
  return mlstm_step_impl(MLSTMWeights::bind(scope), cfg.d(), state, x_t);
}

Var mlstm_block(const Scope& scope, const MLSTMConfig& cfg, const Var& x) {
  require_seq("mlstm_block", x, cfg.dim);
  const std::size_t len = x.shape()[0];
  const MLSTMWeights w = MLSTMWeights::bind(scope);
  MLSTMState state = mlstm_zero_state(scope.tape(), cfg.d());
  std::vector<Var> hidden;
  hidden.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    state = mlstm_step_impl(w, cfg.d(), state, ops::slice0(x, t, t + 1));
    hidden.push_back(state.h);
  }
  return ops::add(x, up_down_projection(scope, ops::concat0(hidden)));
}

}  // namespace xvmunet::xlstm
