#include <cmath>

#include "cell_oracles.hpp"
#include "support.hpp"
#include "xvmunet/xlstm.hpp"

using namespace xvmunet;
using namespace xvmunet::testing;

namespace {

void fill(Tensor& t, std::initializer_list<double> v) {
  std::size_t i = 0;
  for (double x : v) t[i++] = x;
}

std::size_t numeric_rank(std::vector<Vec> m) {
  std::size_t rank = 0;
  const std::size_t rows = m.size(), cols = m[0].size();
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank; r < rows; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    if (std::abs(m[piv][c]) < 1e-10) continue;
    std::swap(m[piv], m[rank]);
    for (std::size_t r = rank + 1; r < rows; ++r) {
      const double f = m[r][c] / m[rank][c];
      for (std::size_t k = c; k < cols; ++k) m[r][k] -= f * m[rank][k];
    }
    ++rank;
  }
  return rank;
}

}  // namespace

TEST(BlockDiagonalMask, UnevenHeadsCoverDiagonal) {
  const Tensor m = xlstm::block_diagonal_mask(7, 3);  // blocks 2, 2, 3
  const std::vector<std::size_t> block{0, 0, 1, 1, 2, 2, 2};
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(m[r * 7 + c], block[r] == block[c] ? 1.0 : 0.0);
  EXPECT_EQ(xlstm::block_diagonal_mask(3, 10), Tensor({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
}

TEST(SLSTM, InitialRecurrentMapsAreBlockDiagonal) {
  ParamStore p;
  xlstm::init_slstm(p, "s", {8, 4}, 3);
  const Tensor mask = xlstm::block_diagonal_mask(8, 4);
  for (const char* g : {"r_z", "r_i", "r_f", "r_o"}) {
    const Tensor& r = p.at(std::string("s.") + g);
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (mask[k] == 0.0) {
        EXPECT_EQ(r[k], 0.0);
      }
    }
  }
  EXPECT_EQ(p.at("s.up_left").shape(), (Shape{8, 11}));  // ceil(8 * 4 / 3)
}

TEST(SLSTM, SequenceMatchesScalarLoopOracle) {
  const xlstm::SLSTMConfig cfg{6, 2};
  ParamStore p;
  xlstm::init_slstm(p, "s", cfg, 5);
  for (const char* g : {"s.b_z", "s.b_i", "s.b_f", "s.b_o"}) {
    Rng rng(hash_name(g));
    p.set(g, random_tensor({6}, rng));
  }
  Rng rng(51);
  const Tensor x = random_tensor({8, 6}, rng);

  Tape tape;
  Binder binder(tape, p);
  const Scope s = Scope(binder).sub("s");
  auto state = xlstm::slstm_zero_state(tape, 6);
  SState ref{Vec(6, 0.0), Vec(6, 0.0), Vec(6, 0.0)};
  Tensor block_ref({8, 6});
  for (std::size_t t = 0; t < 8; ++t) {
    state = xlstm::slstm_step(s, cfg, state, ops::slice0(tape.constant(x), t, t + 1));
    ref = slstm_oracle_step(p, cfg, ref, row(x, t));
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(state.c.value()[j], ref.c[j], 1e-12);
      EXPECT_NEAR(state.n.value()[j], ref.n[j], 1e-12);
      EXPECT_NEAR(state.h.value()[j], ref.h[j], 1e-12);
      EXPECT_GT(ref.n[j], 0.0);
      EXPECT_LE(ref.n[j], static_cast<double>(t + 1));
    }
    const Vec y = projection_oracle(p, "s", ref.h);
    for (std::size_t j = 0; j < 6; ++j) block_ref[t * 6 + j] = x[t * 6 + j] + y[j];
  }
  const Tensor block = xlstm::slstm_block(s, cfg, tape.constant(x)).value();
  expect_tensor_near(block, block_ref, 1e-12);
}

TEST(SLSTM, ForcedGatesCollapseExactly) {
  const xlstm::SLSTMConfig cfg{4, 2};
  ParamStore p;
  xlstm::init_slstm(p, "s", cfg, 6);
  for (auto& v : p.at("s.w_f").data()) v = 0.0;
  for (auto& v : p.at("s.r_f").data()) v = 0.0;
  for (auto& v : p.at("s.w_i").data()) v = 0.0;
  for (auto& v : p.at("s.r_i").data()) v = 0.0;
  p.set("s.b_f", Tensor({4}, -1000.0));  // f = 0
  p.set("s.b_i", Tensor({4}, 1000.0));   // i = 1
  Rng rng(52);
  const Tensor x = random_tensor({1, 4}, rng);
  const Tensor c0 = random_tensor({1, 4}, rng), h0 = random_tensor({1, 4}, rng);

  Tape tape;
  Binder binder(tape, p);
  const Scope s = Scope(binder).sub("s");
  const xlstm::SLSTMState s0{tape.constant(c0), tape.constant(Tensor({1, 4}, 3.0)), tape.constant(h0)};
  const auto s1 = xlstm::slstm_step(s, cfg, s0, tape.constant(x));

  // z and o evaluated independently through the same affine maps
  const Var hr = tape.constant(h0);
  const Var mask = tape.constant(xlstm::block_diagonal_mask(4, 2));
  auto pre = [&](const char* g) {
    return ops::add_bias(ops::add(ops::matmul(tape.constant(x), s(std::string("w_") + g)),
                                  ops::matmul(hr, ops::mul(s(std::string("r_") + g), mask))),
                         s(std::string("b_") + g));
  };
  const Tensor z = ops::tanh(pre("z")).value(), o = ops::sigmoid(pre("o")).value();
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(s1.c.value()[j], z[j]);
    EXPECT_EQ(s1.n.value()[j], 1.0);
    EXPECT_EQ(s1.h.value()[j], o[j] * z[j]);
  }
}

TEST(SLSTM, ZeroDownProjectionIsResidualIdentity) {
  const xlstm::SLSTMConfig cfg{5, 1};
  ParamStore p;
  xlstm::init_slstm(p, "s", cfg, 7);
  for (auto& v : p.at("s.down").data()) v = 0.0;
  Rng rng(53);
  const Tensor x = random_tensor({6, 5}, rng);
  Tape tape;
  Binder binder(tape, p);
  EXPECT_EQ(xlstm::slstm_block(Scope(binder).sub("s"), cfg, tape.constant(x)).value(), x);
}

TEST(MLSTM, SequenceMatchesMatrixLoopOracle) {
  const xlstm::MLSTMConfig cfg{5, 3};
  ParamStore p;
  xlstm::init_mlstm(p, "m", cfg, 8);
  for (const char* b : {"m.b_q", "m.b_k", "m.b_v", "m.b_o", "m.b_i", "m.b_f"}) {
    Rng rng(hash_name(b));
    p.set(b, random_tensor(p.at(b).shape(), rng));
  }
  Rng rng(54);
  const Tensor x = random_tensor({8, 5}, rng, -2.0, 2.0);
  Tape tape;
  Binder binder(tape, p);
  const Scope s = Scope(binder).sub("m");
  auto state = xlstm::mlstm_zero_state(tape, 3);
  MState ref{std::vector<Vec>(3, Vec(3, 0.0)), Vec(3, 0.0), Vec(3, 0.0)};
  Tensor block_ref({8, 5});
  for (std::size_t t = 0; t < 8; ++t) {
    state = xlstm::mlstm_step(s, cfg, state, ops::slice0(tape.constant(x), t, t + 1));
    ref = mlstm_oracle_step(p, 5, 3, ref, row(x, t));
    for (std::size_t a = 0; a < 3; ++a) {
      EXPECT_NEAR(state.h.value()[a], ref.h[a], 1e-12);
      EXPECT_NEAR(state.n.value()[a], ref.n[a], 1e-12);
      for (std::size_t b = 0; b < 3; ++b) EXPECT_NEAR(state.c.value()[a * 3 + b], ref.c[a][b], 1e-12);
    }
    EXPECT_LE(numeric_rank(ref.c), t + 1);
    const Vec y = projection_oracle(p, "m", ref.h);
    for (std::size_t j = 0; j < 5; ++j) block_ref[t * 5 + j] = x[t * 5 + j] + y[j];
  }
  expect_tensor_near(xlstm::mlstm_block(s, cfg, tape.constant(x)).value(), block_ref, 1e-12);
}

namespace {

// d = 4 makes the key scale 1/2, so every quantity below is a short dyadic
// fraction and the arithmetic is exact.
ParamStore forced_mlstm(double b_f) {
  ParamStore p;
  xlstm::init_mlstm(p, "m", {4, 4}, 9);
  for (const char* name : {"m.w_q", "m.w_k", "m.w_v", "m.w_o", "m.w_i", "m.w_f", "m.b_q", "m.b_k", "m.b_v", "m.b_o"}) {
    for (auto& v : p.at(name).data()) v = 0.0;
  }
  p.set("m.b_i", Tensor({1}, 1000.0));
  p.set("m.b_f", Tensor({1}, b_f));
  return p;
}

}  // namespace

TEST(MLSTM, ForcedGatesRetrieveValueExactly) {
  for (double sign : {1.0, -1.0}) {
    ParamStore p = forced_mlstm(-1000.0);
    fill(p.at("m.w_q"), {sign * 1.0, sign * 0.5, 0.0, sign * 0.25});
    fill(p.at("m.w_k"), {2.0, 4.0, 0.0, 2.0});  // k = (1, 2, 0, 1), |k.q| = 2.25
    fill(p.at("m.w_v"), {0.5, -1.0, 2.0, 0.75});
    Tape tape;
    Binder binder(tape, p);
    Tensor x({1, 4});
    x[0] = 1.0;
    const auto s1 = xlstm::mlstm_step(Scope(binder).sub("m"), {4, 4}, xlstm::mlstm_zero_state(tape, 4),
                                      tape.constant(x));
    const Vec v{0.5, -1.0, 2.0, 0.75};
    for (std::size_t a = 0; a < 4; ++a) EXPECT_EQ(s1.h.value()[a], 0.5 * v[a] * sign);  // o = sigmoid(0)
  }
}

TEST(MLSTM, OrthogonalQueryHitsDenominatorFloor) {
  ParamStore p = forced_mlstm(1000.0);  // f = 1 keeps both writes
  fill(p.at("m.w_k"), {2.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0});   // k1 = e0, k2 = e1
  fill(p.at("m.w_q"), {0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0});  // q2 = e0 - e1, orthogonal to n = e0 + e1
  fill(p.at("m.w_v"), {1.0, 2.0, 0.0, -1.0, 0.5, 0.5, 4.0, 0.0});
  Tape tape;
  Binder binder(tape, p);
  const Scope s = Scope(binder).sub("m");
  Tensor x1({1, 4}), x2({1, 4});
  x1[0] = 1.0;
  x2[1] = 1.0;
  auto st = xlstm::mlstm_step(s, {4, 4}, xlstm::mlstm_zero_state(tape, 4), tape.constant(x1));
  st = xlstm::mlstm_step(s, {4, 4}, st, tape.constant(x2));
  const Vec v1{1.0, 2.0, 0.0, -1.0}, v2{0.5, 0.5, 4.0, 0.0};
  for (std::size_t a = 0; a < 4; ++a) EXPECT_EQ(st.h.value()[a], 0.5 * (v1[a] - v2[a]));
}

TEST(MLSTM, ZeroDownProjectionIsResidualIdentity) {
  ParamStore p;
  xlstm::init_mlstm(p, "m", {4, 0}, 10);
  for (auto& v : p.at("m.down").data()) v = 0.0;
  Rng rng(55);
  const Tensor x = random_tensor({5, 4}, rng);
  Tape tape;
  Binder binder(tape, p);
  EXPECT_EQ(xlstm::mlstm_block(Scope(binder).sub("m"), {4, 0}, tape.constant(x)).value(), x);
}

TEST(XLSTMGradient, SLSTMBlockMatchesFiniteDifferences) {
  const xlstm::SLSTMConfig cfg{4, 2};
  ParamStore p;
  xlstm::init_slstm(p, "s", cfg, 11);
  Rng rng(56);
  p.set("x", random_tensor({5, 4}, rng));
  GradCheckOptions opts;
  opts.samples = 150;
  const auto report =
      check_gradients(p, [&](const Scope& s) { return contract(xlstm::slstm_block(s.sub("s"), cfg, s("x"))); }, opts);
  EXPECT_LE(report.max_rel_error, 1e-4) << report.worst().name;
}

TEST(XLSTMGradient, MLSTMBlockMatchesFiniteDifferences) {
  const xlstm::MLSTMConfig cfg{4, 3};
  ParamStore p;
  xlstm::init_mlstm(p, "m", cfg, 12);
  Rng rng(57);
  p.set("x", random_tensor({5, 4}, rng, -2.0, 2.0));
  GradCheckOptions opts;
  opts.samples = 150;
  const auto report =
      check_gradients(p, [&](const Scope& s) { return contract(xlstm::mlstm_block(s.sub("m"), cfg, s("x"))); }, opts);
  EXPECT_LE(report.max_rel_error, 1e-4) << report.worst().name;
}
