#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xvmunet/autodiff.hpp"
#include "xvmunet/params.hpp"

namespace xvmunet::ssm {

// How (A, B, delta) become (A_bar, B_bar). Both share A_bar = exp(delta A).
enum class Discretization {
  // B_bar = (delta A)^-1 (exp(delta A) - I) delta B, exact for piecewise-constant input.
  ExactZoh,
  // B_bar = delta B, the first-order form used by Mamba kernels.
  FirstOrder,
};

// (e^z - 1) / z, continuous at z = 0.
double zoh_phi(double z);
double zoh_phi_derivative(double z);

// Time-invariant single-input single-output SSM with diagonal A.
struct ContinuousSSM {
  std::vector<double> a;  // diagonal of A
  std::vector<double> b;  // N x 1 input map
  std::vector<double> c;  // 1 x N output map
  double delta = 1.0;

  // A = -exp(a_log), which keeps every eigenvalue strictly negative.
  static ContinuousSSM from_log(std::span<const double> a_log, std::vector<double> b, std::vector<double> c,
                                double delta);
  std::size_t state_dim() const { return a.size(); }
};

struct DiscreteSSM {
  std::vector<double> a_bar;  // diagonal
  std::vector<double> b_bar;
};

struct ScanKernel {
  std::vector<double> taps;  // taps[t] = C A_bar^t B_bar
};

DiscreteSSM discretize(const ContinuousSSM& ssm, Discretization mode = Discretization::ExactZoh);

// h <- A_bar h + B_bar x
void step(const DiscreteSSM& d, std::span<double> h, double x);

// y_t = C h_t with h_{-1} = 0.
std::vector<double> scan_recurrent(const DiscreteSSM& d, std::span<const double> c, std::span<const double> x);
ScanKernel make_kernel(const DiscreteSSM& d, std::span<const double> c, std::size_t length);
// Causal convolution y_t = sum_{j<=t} K[j] x_{t-j}; kernel length must equal x length.
std::vector<double> scan_convolutional(const ScanKernel& k, std::span<const double> x);

// Fused time-varying scan over one sequence.
//   x, delta: [L, D]   a_log: [D, N]   b, c: [L, N]
// Channel d carries its own N-dimensional state with A_d = -exp(a_log[d, :]):
//   h_t = exp(delta_t A_d) h_{t-1} + B_bar_t x_t,  y_t[d] = c_t . h_t
// Returns y: [L, D]. Gradients flow to all five inputs.
Var selective_scan_core(const Var& x, const Var& delta, const Var& a_log, const Var& b, const Var& c,
                        Discretization mode = Discretization::ExactZoh);

// Input-dependent maps producing B_t, C_t and delta_t from x_t.
struct SelectiveProjections {
  Var w_b;         // [D, N]
  Var w_c;         // [D, N]
  Var w_delta;     // [D, D]
  Var delta_bias;  // [D]

  static SelectiveProjections bind(const Scope& scope);
};

// Registers w_b, w_c, w_delta, delta_bias under `prefix`. softplus(delta_bias) is
// log-uniform in [1e-3, 1e-1].
void init_projections(ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_state,
                      std::uint64_t seed);
// a_log[d, n] = log(n + 1), so A_d = -(1, 2, ..., N).
void init_a_log(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t d_state);

// x: [L, D] -> y: [L, D] with delta_t = softplus(delta_bias + x_t W_delta).
Var selective_scan(const SelectiveProjections& proj, const Var& a_log, const Var& x,
                   Discretization mode = Discretization::ExactZoh);
// x: [Batch, L, D] -> [Batch, L, D]; sequences are independent.
Var selective_scan_batch(const SelectiveProjections& proj, const Var& a_log, const Var& x,
                         Discretization mode = Discretization::ExactZoh);

}  // namespace xvmunet::ssm
