#include "xvmunet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xvmunet/errors.hpp"

namespace xvmunet::ops {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

void require_single(const char* op, const Var& s) {
  if (s.size() != 1) throw DimensionError(std::string(op) + ": expected single-element operand, got " + shape_str(s.shape()));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <class F, class D>
Var unary(const Var& x, F f, D dfdx) {
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const Var parents[] = {x};
  return x.tape().record(std::move(y), parents, [x, dfdx](std::span<const double> g, GradSink& sink) {
    const Tensor& xv = x.value();
    auto gx = sink.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(y), parents, [a, b](std::span<const double> g, GradSink& sink) {
    for (const Var& p : {a, b}) {
      if (!sink.wants(p)) continue;
      auto gp = sink.at(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(y), parents, [a, b](std::span<const double> g, GradSink& sink) {
    if (sink.wants(a)) {
      auto ga = sink.at(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (sink.wants(b)) {
      auto gb = sink.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(y), parents, [a, b](std::span<const double> g, GradSink& sink) {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    if (sink.wants(a)) {
      auto ga = sink.at(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (sink.wants(b)) {
      auto gb = sink.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  Tensor y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(y), parents, [a, b](std::span<const double> g, GradSink& sink) {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    if (sink.wants(a)) {
      auto ga = sink.at(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (sink.wants(b)) {
      auto gb = sink.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var scale_by(const Var& x, const Var& s) {
  require_single("scale_by", s);
  const double sv = s.value()[0];
  Tensor y = x.value();
  for (auto& v : y.data()) v *= sv;
  const Var parents[] = {x, s};
  return x.tape().record(std::move(y), parents, [x, s](std::span<const double> g, GradSink& sink) {
    const double sv = s.value()[0];
    if (sink.wants(x)) {
      auto gx = sink.at(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (sink.wants(s)) {
      const auto xv = x.value().data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      sink.at(s)[0] += acc;
    }
  });
}

Var div_by(const Var& x, const Var& s) {
  require_single("div_by", s);
  const double sv = s.value()[0];
  Tensor y = x.value();
  for (auto& v : y.data()) v /= sv;
  const Var parents[] = {x, s};
  return x.tape().record(std::move(y), parents, [x, s](std::span<const double> g, GradSink& sink) {
    const double sv = s.value()[0];
    if (sink.wants(x)) {
      auto gx = sink.at(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / sv;
    }
    if (sink.wants(s)) {
      const auto xv = x.value().data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      sink.at(s)[0] -= acc / (sv * sv);
    }
  });
}

Var scale(const Var& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Var add_scalar(const Var& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var sigmoid(const Var& x) {
  return unary(x, stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double v) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var silu(const Var& x) {
  return unary(x, [](double v) { return v * stable_sigmoid(v); }, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
  });
}

Var gelu(const Var& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); }, [](double v) {
    return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
  });
}

Var softplus(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      stable_sigmoid);
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var abs(const Var& x) {
  return unary(x, [](double v) { return std::fabs(v); }, [](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

Var clamp_min(const Var& x, double lo) {
  return unary(x, [lo](double v) { return v > lo ? v : lo; }, [lo](double v) { return v > lo ? 1.0 : 0.0; });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const Var parents[] = {x};
  return x.tape().record(Tensor::scalar(acc), parents, [x](std::span<const double> g, GradSink& sink) {
    for (auto& v : sink.at(x)) v += g[0];
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor y({m, n});
  {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    auto yv = y.data();
    for (std::size_t i = 0; i < m; ++i) {
      double* yr = &yv[i * n];
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        const double* br = &bv[p * n];
        for (std::size_t j = 0; j < n; ++j) yr[j] += aip * br[j];
      }
    }
  }
  const Var parents[] = {a, b};
  return a.tape().record(std::move(y), parents, [a, b, m, k, n](std::span<const double> g, GradSink& sink) {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    if (sink.wants(a)) {
      auto ga = sink.at(a);  // g * b^T
      for (std::size_t i = 0; i < m; ++i) {
        const double* gr = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* br = &bv[p * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (sink.wants(b)) {
      auto gb = sink.at(b);  // a^T * g
      for (std::size_t i = 0; i < m; ++i) {
        const double* gr = &g[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbr = &gb[p * n];
          for (std::size_t j = 0; j < n; ++j) gbr[j] += aip * gr[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor y({n, m});
  const auto av = a.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = av[i * n + j];
  const Var parents[] = {a};
  return a.tape().record(std::move(y), parents, [a, m, n](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var add_bias(const Var& x, const Var& b) {
  require_rank("add_bias", b, 1);
  const std::size_t n = b.shape()[0];
  if (x.shape().back() != n) {
    throw DimensionError("add_bias: last extent of " + shape_str(x.shape()) + " differs from bias " +
                         shape_str(b.shape()));
  }
  Tensor y = x.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i % n];
  const Var parents[] = {x, b};
  return x.tape().record(std::move(y), parents, [x, b, n](std::span<const double> g, GradSink& sink) {
    if (sink.wants(x)) {
      auto gx = sink.at(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (sink.wants(b)) {
      auto gb = sink.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

Var add_channel_bias(const Var& x, const Var& b) {
  require_rank("add_channel_bias", x, 3);
  require_rank("add_channel_bias", b, 1);
  const std::size_t c = x.shape()[0];
  const std::size_t plane = x.shape()[1] * x.shape()[2];
  if (b.shape()[0] != c) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " with bias " + shape_str(b.shape()));
  }
  Tensor y = x.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i / plane];
  const Var parents[] = {x, b};
  return x.tape().record(std::move(y), parents, [x, b, plane](std::span<const double> g, GradSink& sink) {
    if (sink.wants(x)) {
      auto gx = sink.at(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (sink.wants(b)) {
      auto gb = sink.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i / plane] += g[i];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  const Var parents[] = {x};
  return x.tape().record(std::move(y), parents, [x](std::span<const double> g, GradSink& sink) {
    auto gx = sink.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var permute3(const Var& x, std::array<std::size_t, 3> axes) {
  require_rank("permute3", x, 3);
  const Shape& in = x.shape();
  const Shape out{in[axes[0]], in[axes[1]], in[axes[2]]};
  const std::array<std::size_t, 3> in_stride{in[1] * in[2], in[2], 1};
  const std::array<std::size_t, 3> src_stride{in_stride[axes[0]], in_stride[axes[1]], in_stride[axes[2]]};
  std::vector<std::size_t> src(numel(in));
  std::size_t o = 0;
  for (std::size_t i = 0; i < out[0]; ++i)
    for (std::size_t j = 0; j < out[1]; ++j)
      for (std::size_t k = 0; k < out[2]; ++k) src[o++] = i * src_stride[0] + j * src_stride[1] + k * src_stride[2];
  Tensor y(out);
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < src.size(); ++i) y[i] = xv[src[i]];
  const Var parents[] = {x};
  return x.tape().record(std::move(y), parents, [x, src = std::move(src)](std::span<const double> g, GradSink& sink) {
    auto gx = sink.at(x);
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> index) {
  require_rank("gather_rows", x, 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<std::size_t> idx(index.begin(), index.end());
  for (auto r : idx) {
    if (r >= rows) throw ContractError("gather_rows: index out of range");
  }
  Tensor y({idx.size(), cols});
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) y[i * cols + c] = xv[idx[i] * cols + c];
  const Var parents[] = {x};
  return x.tape().record(std::move(y), parents, [x, cols, idx = std::move(idx)](std::span<const double> g, GradSink& sink) {
    auto gx = sink.at(x);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += g[i * cols + c];
  });
}

Var slice0(const Var& x, std::size_t begin, std::size_t end) {
  const Shape& in = x.shape();
  if (begin >= end || end > in[0]) throw ContractError("slice0: bad range on " + shape_str(in));
  const std::size_t inner = x.size() / in[0];
  Shape out = in;
  out[0] = end - begin;
  const auto xv = x.value().data();
  Tensor y(out, std::vector<double>(xv.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                                    xv.begin() + static_cast<std::ptrdiff_t>(end * inner)));
  const Var parents[] = {x};
  return x.tape().record(std::move(y), parents, [x, offset = begin * inner](std::span<const double> g, GradSink& sink) {
    auto gx = sink.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
  });
}

Var concat0(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat0: no operands");
  Shape out = parts[0].shape();
  out[0] = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != out.size() || !std::equal(s.begin() + 1, s.end(), out.begin() + 1)) {
      throw DimensionError("concat0: trailing extents differ, " + shape_str(parts[0].shape()) + " vs " + shape_str(s));
    }
    out[0] += s[0];
    const auto v = p.value().data();
    data.insert(data.end(), v.begin(), v.end());
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape().record(Tensor(out, std::move(data)), parts, [ps](std::span<const double> g, GradSink& sink) {
    std::size_t offset = 0;
    for (const auto& p : ps) {
      const std::size_t n = p.size();
      if (sink.wants(p)) {
        auto gp = sink.at(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", x, 2);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (begin >= end || end > cols) throw ContractError("slice_cols: bad range on " + shape_str(x.shape()));
  const std::size_t w = end - begin;
  Tensor y({rows, w});
  const auto xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) y[r * w + c] = xv[r * cols + begin + c];
  const Var parents[] = {x};
  return x.tape().record(std::move(y), parents, [x, rows, cols, begin, w](std::span<const double> g, GradSink& sink) {
    auto gx = sink.at(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
  });
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw DimensionError("layernorm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match channel extent of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / c;
  const auto xv = x.value().data();
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * c];
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * c + j] = h;
      y[r * c + j] = gv[j] * h + bv[j];
    }
  }
  const Var parents[] = {x, gamma, beta};
  return x.tape().record(
      std::move(y), parents,
      [x, gamma, beta, c, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const double> g,
                                                                                   GradSink& sink) {
        const auto gv = gamma.value().data();
        if (sink.wants(gamma) || sink.wants(beta)) {
          std::vector<double> dg(c, 0.0), db(c, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) {
              dg[j] += g[r * c + j] * xhat[r * c + j];
              db[j] += g[r * c + j];
            }
          if (sink.wants(gamma)) {
            auto s = sink.at(gamma);
            for (std::size_t j = 0; j < c; ++j) s[j] += dg[j];
          }
          if (sink.wants(beta)) {
            auto s = sink.at(beta);
            for (std::size_t j = 0; j < c; ++j) s[j] += db[j];
          }
        }
        if (sink.wants(x)) {
          auto gx = sink.at(x);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dh = g[r * c + j] * gv[j];
              s1 += dh;
              s2 += dh * xhat[r * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double dh = g[r * c + j] * gv[j];
              gx[r * c + j] += inv_std[r] * (dh - inv_c * s1 - xhat[r * c + j] * inv_c * s2);
            }
          }
        }
      });
}

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, stride, pad, groups, h_out, w_out;
};

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
  const std::size_t padded = in + 2 * pad;
  if (padded < k || (padded - k) % stride != 0) {
    throw ConfigError(std::string("conv2d: non-integral output ") + axis + " for extent " + std::to_string(in) +
                      ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(pad));
  }
  return (padded - k) / stride + 1;
}

}  // namespace

Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t padding, std::size_t groups) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", kernel, 4);
  if (stride == 0 || groups == 0) throw ConfigError("conv2d: stride and groups must be positive");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs[0] % groups != 0 || ks[0] % groups != 0 || ks[1] * groups != xs[0]) {
    throw DimensionError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ks) +
                         " at groups=" + std::to_string(groups));
  }
  ConvGeometry geo{xs[0], xs[1], xs[2], ks[0], ks[2], ks[3], stride, padding, groups, 0, 0};
  geo.h_out = conv_extent(geo.h, geo.kh, stride, padding, "height");
  geo.w_out = conv_extent(geo.w, geo.kw, stride, padding, "width");

  // Visits every (output, input, tap) triple once; fn(out_idx, in_idx, w_idx).
  auto for_each_tap = [](const ConvGeometry& g, auto&& fn) {
    const std::size_t cin_g = g.c_in / g.groups, cout_g = g.c_out / g.groups;
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const std::size_t grp = co / cout_g;
      for (std::size_t cl = 0; cl < cin_g; ++cl) {
        const std::size_t ci = grp * cin_g + cl;
        for (std::size_t ky = 0; ky < g.kh; ++ky)
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::size_t widx = ((co * cin_g + cl) * g.kh + ky) * g.kw + kx;
            for (std::size_t oy = 0; oy < g.h_out; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              const std::size_t out_row = (co * g.h_out + oy) * g.w_out;
              const std::size_t in_row = (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
              for (std::size_t ox = 0; ox < g.w_out; ++ox) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                fn(out_row + ox, in_row + static_cast<std::size_t>(ix), widx);
              }
            }
          }
      }
    }
  };

  Tensor y({geo.c_out, geo.h_out, geo.w_out});
  {
    const auto xv = x.value().data();
    const auto kv = kernel.value().data();
    auto yv = y.data();
    for_each_tap(geo, [&](std::size_t o, std::size_t i, std::size_t k) { yv[o] += kv[k] * xv[i]; });
  }
  const Var parents[] = {x, kernel};
  return x.tape().record(std::move(y), parents, [x, kernel, geo, for_each_tap](std::span<const double> g, GradSink& sink) {
    const auto xv = x.value().data();
    const auto kv = kernel.value().data();
    if (sink.wants(x)) {
      auto gx = sink.at(x);
      for_each_tap(geo, [&](std::size_t o, std::size_t i, std::size_t k) { gx[i] += g[o] * kv[k]; });
    }
    if (sink.wants(kernel)) {
      auto gk = sink.at(kernel);
      for_each_tap(geo, [&](std::size_t o, std::size_t i, std::size_t k) { gk[k] += g[o] * xv[i]; });
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& kernel, std::size_t stride) {
  require_rank("conv_transpose2d", x, 3);
  require_rank("conv_transpose2d", kernel, 4);
  if (stride == 0) throw ConfigError("conv_transpose2d: stride must be positive");
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks[0] != xs[0]) {
    throw DimensionError("conv_transpose2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ks));
  }
  const std::size_t c_in = xs[0], h = xs[1], w = xs[2];
  const std::size_t c_out = ks[1], kh = ks[2], kw = ks[3];
  const std::size_t h_out = (h - 1) * stride + kh, w_out = (w - 1) * stride + kw;

  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ci = 0; ci < c_in; ++ci)
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((ci * c_out + co) * kh + ky) * kw + kx;
            for (std::size_t iy = 0; iy < h; ++iy) {
              const std::size_t in_row = (ci * h + iy) * w;
              const std::size_t out_row = (co * h_out + iy * stride + ky) * w_out + kx;
              for (std::size_t ix = 0; ix < w; ++ix) fn(out_row + ix * stride, in_row + ix, widx);
            }
          }
  };

  Tensor y({c_out, h_out, w_out});
  {
    const auto xv = x.value().data();
    const auto kv = kernel.value().data();
    auto yv = y.data();
    for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { yv[o] += kv[k] * xv[i]; });
  }
  const Var parents[] = {x, kernel};
  return x.tape().record(std::move(y), parents, [x, kernel, for_each_tap](std::span<const double> g, GradSink& sink) {
    const auto xv = x.value().data();
    const auto kv = kernel.value().data();
    if (sink.wants(x)) {
      auto gx = sink.at(x);
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gx[i] += g[o] * kv[k]; });
    }
    if (sink.wants(kernel)) {
      auto gk = sink.at(kernel);
      for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { gk[k] += g[o] * xv[i]; });
    }
  });
}

}  // namespace xvmunet::ops
