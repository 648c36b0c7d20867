#pragma once

#include <cstdint>
#include <string>

#include "xvmunet/params.hpp"

// sLSTM (scalar memory with normalizer state) and mLSTM (matrix memory) blocks.
// Sequences are rank-2 Vars [L, D]; single steps use [1, D] rows.
namespace xvmunet::xlstm {

struct SLSTMConfig {
  std::size_t dim = 0;
  // Recurrent maps are block-diagonal with this many blocks.
  std::size_t heads = 4;
  double proj_factor = 4.0 / 3.0;

  std::size_t up_dim() const;
};

// 1 on the diagonal blocks of a dim x dim matrix split into `heads` contiguous
// blocks, 0 elsewhere. Block sizes differ by at most one when heads does not divide dim.
Tensor block_diagonal_mask(std::size_t dim, std::size_t heads);

struct SLSTMState {
  Var c;  // cell
  Var n;  // normalizer
  Var h;  // hidden
};

SLSTMState slstm_zero_state(Tape& tape, std::size_t dim);
void init_slstm(ParamStore& store, const std::string& prefix, const SLSTMConfig& cfg, std::uint64_t seed);

// z = tanh(W_z x + R_z h), {i, f, o} = sigmoid(W x + R h + b) using h_{t-1};
// c = f c + i z, n = f n + i, h = o c / max(n, 1e-8).
SLSTMState slstm_step(const Scope& scope, const SLSTMConfig& cfg, const SLSTMState& state, const Var& x_t);
// F_t = W_down(W_up_left h_t * GELU(W_up_right h_t)) + x_t over the whole sequence.
Var slstm_block(const Scope& scope, const SLSTMConfig& cfg, const Var& x);

struct MLSTMConfig {
  std::size_t dim = 0;
  // Key/value/query width d; 0 means equal to dim.
  std::size_t head_dim = 0;
  double proj_factor = 4.0 / 3.0;

  std::size_t d() const { return head_dim == 0 ? dim : head_dim; }
  std::size_t up_dim() const;
};

struct MLSTMState {
  Var c;  // [d, d] memory
  Var n;  // [1, d] normalizer
  Var h;  // [1, d]
};

MLSTMState mlstm_zero_state(Tape& tape, std::size_t d);
void init_mlstm(ParamStore& store, const std::string& prefix, const MLSTMConfig& cfg, std::uint64_t seed);

// Gates come from x_t only: scalar i and f, vector o.
// C = f C + i v k^T, n = f n + i k, h = o * C q / max(|n^T q|, 1), k scaled by 1/sqrt(d).
MLSTMState mlstm_step(const Scope& scope, const MLSTMConfig& cfg, const MLSTMState& state, const Var& x_t);
Var mlstm_block(const Scope& scope, const MLSTMConfig& cfg, const Var& x);

// y = W_down(W_up_left h * GELU(W_up_right h)); h: [L, d_in].
Var up_down_projection(const Scope& scope, const Var& h);

}  // namespace xvmunet::xlstm
