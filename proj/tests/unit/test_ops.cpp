#include <cmath>

#include "support.hpp"
#include "xvmunet/errors.hpp"

using namespace xvmunet;
using namespace xvmunet::testing;

namespace {

constexpr double kGradTol = 1e-4;

Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      out[i * n + j] = s;
    }
  return out;
}

Tensor conv_oracle(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad, std::size_t groups) {
  const std::size_t h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t out_per_group = cout / groups;
  Tensor out({cout, oh, ow});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t ci = 0; ci < cg; ++ci)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              const std::size_t c_in = (co / out_per_group) * cg + ci;
              s += x[(c_in * h + iy) * wd + ix] * w[((co * cg + ci) * kh + ky) * kw + kx];
            }
        out[(co * oh + oy) * ow + ox] = s;
      }
  return out;
}

Tensor conv_transpose_oracle(const Tensor& x, const Tensor& w, std::size_t stride) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h - 1) * stride + kh, ow = (wd - 1) * stride + kw;
  Tensor out({cout, oh, ow});
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx)
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              out[(co * oh + y * stride + ky) * ow + xx * stride + kx] +=
                  x[(ci * h + y) * wd + xx] * w[((ci * cout + co) * kh + ky) * kw + kx];
  return out;
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndMismatchedData) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), DimensionError);
  EXPECT_THROW(Tensor::from_external({1}, {std::nan("")}), DataError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Tape, BackwardNeedsScalarLoss) {
  Tape tape;
  const Var x = tape.leaf(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tape, MixingTapesIsRejected) {
  Tape t1, t2;
  const Var a = t1.leaf(Tensor({2}, 1.0));
  const Var b = t2.leaf(Tensor({2}, 1.0));
  EXPECT_THROW(ops::add(a, b), ContractError);
}

TEST(Tape, RepeatedBackwardIsIdentical) {
  Rng rng(1);
  Tape tape;
  const Var x = tape.leaf(random_tensor({3, 4}, rng));
  const Var w = tape.leaf(random_tensor({4, 2}, rng));
  const Var loss = ops::sum(ops::tanh(ops::matmul(x, w)));
  const auto g1 = tape.backward(loss), g2 = tape.backward(loss);
  EXPECT_EQ(g1.of(x), g2.of(x));
  EXPECT_EQ(g1.of(w), g2.of(w));
}

TEST(Tape, SharedOperandAccumulates) {
  Tape tape;
  const Var x = tape.leaf(Tensor({1}, 3.0));
  const Var y = ops::mul(x, x);  // dy/dx = 2x
  EXPECT_DOUBLE_EQ(tape.backward(y).of(x)[0], 6.0);
}

TEST(Tape, UnreachedLeafGetsZeros) {
  Tape tape;
  const Var x = tape.leaf(Tensor({2}, 1.0));
  const Var y = tape.leaf(Tensor({2}, 1.0));
  const auto g = tape.backward(ops::sum(x));
  EXPECT_FALSE(g.reached(y));
  EXPECT_EQ(g.of(y), Tensor({2}));
}

TEST(Ops, ShapeMismatchNamesShapes) {
  Tape tape;
  const Var a = tape.leaf(Tensor({2, 3}));
  const Var b = tape.leaf(Tensor({3, 2}));
  try {
    ops::add(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ops::matmul(a, a), DimensionError);
}

TEST(Ops, MatmulMatchesTripleLoop) {
  Rng rng(2);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {7, 4, 9}}) {
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tape tape;
    expect_tensor_near(ops::matmul(tape.constant(a), tape.constant(b)).value(), matmul_oracle(a, b), 1e-14);
  }
}

TEST(Ops, Conv2dMatchesDirectLoop) {
  Rng rng(3);
  struct Case {
    Shape x, w;
    std::size_t stride, pad, groups;
  };
  for (const auto& c : {Case{{2, 7, 6}, {3, 2, 3, 3}, 1, 1, 1}, Case{{4, 8, 8}, {4, 1, 3, 3}, 1, 1, 4},
                        Case{{3, 8, 8}, {5, 3, 4, 4}, 4, 0, 1}, Case{{2, 6, 6}, {2, 2, 2, 2}, 2, 0, 1}}) {
    const Tensor x = random_tensor(c.x, rng), w = random_tensor(c.w, rng);
    Tape tape;
    const Var y = ops::conv2d(tape.constant(x), tape.constant(w), c.stride, c.pad, c.groups);
    expect_tensor_near(y.value(), conv_oracle(x, w, c.stride, c.pad, c.groups), 1e-13);
  }
}

TEST(Ops, Conv2dRejectsNonIntegralExtent) {
  Tape tape;
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor({1, 7, 7})), tape.constant(Tensor({1, 1, 2, 2})), 2), ConfigError);
}

TEST(Ops, ConvTransposeMatchesScatterLoop) {
  Rng rng(4);
  const Tensor x = random_tensor({3, 4, 5}, rng), w = random_tensor({3, 2, 2, 2}, rng);
  Tape tape;
  expect_tensor_near(ops::conv_transpose2d(tape.constant(x), tape.constant(w), 2).value(),
                     conv_transpose_oracle(x, w, 2), 1e-13);
}

TEST(Ops, LayernormMatchesScalarFormula) {
  Rng rng(5);
  const Tensor x = random_tensor({3, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
  Tape tape;
  const Tensor y = ops::layernorm(tape.constant(x), tape.constant(g), tape.constant(b)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 6; ++j) mu += x[r * 6 + j] / 6.0;
    for (std::size_t j = 0; j < 6; ++j) var += (x[r * 6 + j] - mu) * (x[r * 6 + j] - mu) / 6.0;
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(y[r * 6 + j], g[j] * (x[r * 6 + j] - mu) / std::sqrt(var + 1e-5) + b[j], 1e-13);
    }
  }
}

TEST(Ops, PermuteAndGatherMoveElements) {
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  Tape tape;
  const Tensor p = ops::chw_to_hwc(tape.constant(x)).value();
  ASSERT_EQ(p.shape(), (Shape{3, 4, 2}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t h = 0; h < 3; ++h)
      for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(p[(h * 4 + w) * 2 + c], x[(c * 3 + h) * 4 + w]);
  EXPECT_EQ(ops::hwc_to_chw(ops::chw_to_hwc(tape.constant(x))).value(), x);

  const Tensor m = random_tensor({4, 2}, rng);
  const std::vector<std::size_t> idx{3, 0, 0, 2};
  const Tensor g = ops::gather_rows(tape.constant(m), idx).value();
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(g[i * 2 + j], m[idx[i] * 2 + j]);
}

TEST(Ops, ActivationValues) {
  Tape tape;
  const Var x = tape.constant(Tensor({3}, std::vector<double>{-800.0, 0.0, 800.0}));
  const Tensor s = ops::sigmoid(x).value();
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 0.5);
  EXPECT_EQ(s[2], 1.0);
  const Tensor sp = ops::softplus(x).value();
  EXPECT_EQ(sp[0], 0.0);
  EXPECT_NEAR(sp[1], std::log(2.0), 1e-15);
  EXPECT_EQ(sp[2], 800.0);
  const Tensor g = ops::gelu(tape.constant(Tensor({1}, 1.0))).value();
  EXPECT_NEAR(g[0], 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0))), 1e-15);
}

namespace xvmunet::testing {
void PrintTo(const OpCase& c, std::ostream* os) { *os << c.name; }
}  // namespace xvmunet::testing

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const OpCase& c = GetParam();
  const auto report = check_case(c);
  EXPECT_LE(report.max_rel_error, kGradTol) << c.name << " worst " << report.worst().name << "["
                                            << report.worst().index << "]";
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });
