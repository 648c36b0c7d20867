#include "xvmunet/ssm.hpp"

#include <cmath>

#include "xvmunet/errors.hpp"
#include "xvmunet/ops.hpp"

namespace xvmunet::ssm {

double zoh_phi(double z) {
  if (z == 0.0) return 1.0;
  return std::expm1(z) / z;
}

double zoh_phi_derivative(double z) {
  if (std::fabs(z) < 1e-2) {
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0 + z / 840.0))));
  }
  return (z * std::exp(z) - std::expm1(z)) / (z * z);
}

ContinuousSSM ContinuousSSM::from_log(std::span<const double> a_log, std::vector<double> b, std::vector<double> c,
                                      double delta) {
  ContinuousSSM out;
  out.a.reserve(a_log.size());
  for (double v : a_log) out.a.push_back(-std::exp(v));
  out.b = std::move(b);
  out.c = std::move(c);
  out.delta = delta;
  return out;
}

DiscreteSSM discretize(const ContinuousSSM& ssm, Discretization mode) {
  if (!(ssm.delta > 0.0)) throw DomainError("discretize: step size must be positive, got " + std::to_string(ssm.delta));
  const std::size_t n = ssm.state_dim();
  if (n == 0 || ssm.b.size() != n) {
    throw DimensionError("discretize: A has " + std::to_string(n) + " diagonal entries but B has " +
                         std::to_string(ssm.b.size()));
  }
  DiscreteSSM d;
  d.a_bar.resize(n);
  d.b_bar.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = ssm.delta * ssm.a[i];
    d.a_bar[i] = std::exp(z);
    const double phi = mode == Discretization::ExactZoh ? zoh_phi(z) : 1.0;
    d.b_bar[i] = ssm.delta * phi * ssm.b[i];
  }
  return d;
}

void step(const DiscreteSSM& d, std::span<double> h, double x) {
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = d.a_bar[i] * h[i] + d.b_bar[i] * x;
}

std::vector<double> scan_recurrent(const DiscreteSSM& d, std::span<const double> c, std::span<const double> x) {
  if (c.size() != d.a_bar.size()) throw DimensionError("scan_recurrent: C does not match state dimension");
  std::vector<double> h(d.a_bar.size(), 0.0);
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    step(d, h, x[t]);
    double acc = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) acc += c[i] * h[i];
    y[t] = acc;
  }
  return y;
}

ScanKernel make_kernel(const DiscreteSSM& d, std::span<const double> c, std::size_t length) {
  if (c.size() != d.a_bar.size()) throw DimensionError("make_kernel: C does not match state dimension");
  ScanKernel k;
  k.taps.resize(length);
  std::vector<double> power = d.b_bar;  // A_bar^t B_bar
  for (std::size_t t = 0; t < length; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < power.size(); ++i) acc += c[i] * power[i];
    k.taps[t] = acc;
    for (std::size_t i = 0; i < power.size(); ++i) power[i] *= d.a_bar[i];
  }
  return k;
}

std::vector<double> scan_convolutional(const ScanKernel& k, std::span<const double> x) {
  if (k.taps.size() != x.size()) {
    throw ContractError("scan_convolutional: kernel length " + std::to_string(k.taps.size()) +
                        " differs from sequence length " + std::to_string(x.size()));
  }
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= t; ++j) acc += k.taps[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

Var selective_scan_core(const Var& x, const Var& delta, const Var& a_log, const Var& b, const Var& c,
                        Discretization mode) {
  if (x.shape().size() != 2 || a_log.shape().size() != 2) {
    throw DimensionError("selective_scan_core: x and a_log must be rank 2");
  }
  const std::size_t len = x.shape()[0], dm = x.shape()[1], ns = a_log.shape()[1];
  if (delta.shape() != x.shape() || a_log.shape()[0] != dm || b.shape() != Shape{len, ns} ||
      c.shape() != Shape{len, ns}) {
    throw DimensionError("selective_scan_core: inconsistent shapes x" + shape_str(x.shape()) + " delta" +
                         shape_str(delta.shape()) + " a_log" + shape_str(a_log.shape()) + " B" +
                         shape_str(b.shape()) + " C" + shape_str(c.shape()));
  }
  const bool exact = mode == Discretization::ExactZoh;
  const auto xv = x.value().data();
  const auto dv = delta.value().data();
  const auto bv = b.value().data();
  const auto cv = c.value().data();
  std::vector<double> a(dm * ns);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log.value()[i]);

  // Saved per (t, d, n): state after the step, A_bar and phi(delta A).
  const std::size_t per_t = dm * ns;
  std::vector<double> hs(len * per_t), abar(len * per_t), phi(exact ? len * per_t : 0);
  Tensor y({len, dm});
  std::vector<double> h(per_t, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* bt = &bv[t * ns];
    const double* ct = &cv[t * ns];
    for (std::size_t d = 0; d < dm; ++d) {
      const double dt = dv[t * dm + d];
      const double xt = xv[t * dm + d];
      double acc = 0.0;
      for (std::size_t n = 0; n < ns; ++n) {
        const std::size_t k = d * ns + n;
        const double z = dt * a[k];
        const double ab = std::exp(z);
        const double ph = exact ? zoh_phi(z) : 1.0;
        h[k] = ab * h[k] + dt * ph * bt[n] * xt;
        acc += ct[n] * h[k];
        abar[t * per_t + k] = ab;
        if (exact) phi[t * per_t + k] = ph;
      }
      y[t * dm + d] = acc;
    }
    std::copy(h.begin(), h.end(), hs.begin() + static_cast<std::ptrdiff_t>(t * per_t));
  }

  const Var parents[] = {x, delta, a_log, b, c};
  return x.tape().record(
      std::move(y), parents,
      [=, a = std::move(a), hs = std::move(hs), abar = std::move(abar), phi = std::move(phi)](
          std::span<const double> g, GradSink& sink) {
        const auto xv = x.value().data();
        const auto dv = delta.value().data();
        const auto bv = b.value().data();
        const auto cv = c.value().data();
        std::vector<double> gx(len * dm, 0.0), gd(len * dm, 0.0), ga(dm * ns, 0.0), gb(len * ns, 0.0),
            gc(len * ns, 0.0);
        std::vector<double> gh(per_t, 0.0);  // dL/dh_t carried backwards in time
        for (std::size_t t = len; t-- > 0;) {
          const double* bt = &bv[t * ns];
          const double* ct = &cv[t * ns];
          for (std::size_t d = 0; d < dm; ++d) {
            const double gy = g[t * dm + d];
            const double dt = dv[t * dm + d];
            const double xt = xv[t * dm + d];
            double gx_acc = 0.0, gd_acc = 0.0;
            for (std::size_t n = 0; n < ns; ++n) {
              const std::size_t k = d * ns + n;
              const std::size_t tk = t * per_t + k;
              const double h_t = hs[tk];
              const double h_prev = t > 0 ? hs[tk - per_t] : 0.0;
              gc[t * ns + n] += gy * h_t;
              const double ght = gh[k] + gy * ct[n];
              const double ab = abar[tk];
              const double ph = exact ? phi[tk] : 1.0;
              const double z = dt * a[k];
              const double dph = exact ? zoh_phi_derivative(z) : 0.0;
              const double g_ab = ght * h_prev;
              const double g_bb = ght * xt;  // dL/dB_bar
              gx_acc += ght * dt * ph * bt[n];
              // A_bar = exp(dt a); B_bar = dt phi(dt a) B
              gd_acc += g_ab * ab * a[k] + g_bb * (ph + z * dph) * bt[n];
              ga[k] += g_ab * ab * dt + g_bb * dt * dt * dph * bt[n];
              gb[t * ns + n] += g_bb * dt * ph;
              gh[k] = ght * ab;
            }
            gx[t * dm + d] += gx_acc;
            gd[t * dm + d] += gd_acc;
          }
        }
        auto flush = [&sink](const Var& v, const std::vector<double>& src) {
          if (!sink.wants(v)) return;
          auto dst = sink.at(v);
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        flush(x, gx);
        flush(delta, gd);
        flush(b, gb);
        flush(c, gc);
        // dA/da_log = A
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= a[i];
        flush(a_log, ga);
      });
}

SelectiveProjections SelectiveProjections::bind(const Scope& scope) {
  return SelectiveProjections{scope("w_b"), scope("w_c"), scope("w_delta"), scope("delta_bias")};
}

void init_projections(ParamStore& store, const std::string& prefix, std::size_t d_model, std::size_t d_state,
                      std::uint64_t seed) {
  init_kaiming(store, join_name(prefix, "w_b"), {d_model, d_state}, d_model, seed);
  init_kaiming(store, join_name(prefix, "w_c"), {d_model, d_state}, d_model, seed);
  init_kaiming(store, join_name(prefix, "w_delta"), {d_model, d_model}, d_model, seed);
  const std::string bias_name = join_name(prefix, "delta_bias");
  Rng rng = param_rng(seed, bias_name);
  Tensor bias({d_model});
  for (auto& v : bias.data()) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    v = dt + std::log(-std::expm1(-dt));  // softplus^-1
  }
  store.set(bias_name, std::move(bias));
}

void init_a_log(ParamStore& store, const std::string& name, std::size_t d_model, std::size_t d_state) {
  Tensor t({d_model, d_state});
  for (std::size_t d = 0; d < d_model; ++d)
    for (std::size_t n = 0; n < d_state; ++n) t[d * d_state + n] = std::log(static_cast<double>(n + 1));
  store.set(name, std::move(t));
}

Var selective_scan(const SelectiveProjections& proj, const Var& a_log, const Var& x, Discretization mode) {
  const Var b = ops::matmul(x, proj.w_b);
  const Var c = ops::matmul(x, proj.w_c);
  const Var delta = ops::softplus(ops::add_bias(ops::matmul(x, proj.w_delta), proj.delta_bias));
  return selective_scan_core(x, delta, a_log, b, c, mode);
}

Var selective_scan_batch(const SelectiveProjections& proj, const Var& a_log, const Var& x, Discretization mode) {
  if (x.shape().size() != 3) throw DimensionError("selective_scan_batch: expected [Batch, L, D], got " + shape_str(x.shape()));
  const std::size_t batch = x.shape()[0], len = x.shape()[1], dm = x.shape()[2];
  std::vector<Var> outs;
  outs.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const Var seq = ops::reshape(ops::slice0(x, i, i + 1), {len, dm});
    outs.push_back(ops::reshape(selective_scan(proj, a_log, seq, mode), {1, len, dm}));
  }
  return ops::concat0(outs);
}

}  // namespace xvmunet::ssm
