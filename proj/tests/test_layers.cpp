#include <gtest/gtest.h>

#include <random>

#include "fd_check.hpp"
#include "savc/layers.hpp"
#include "support.hpp"

using namespace savc;
using namespace savc::nn;
using savc::testing::check_input_grad;
using savc::testing::check_param_grads;
using savc::testing::random_mat;

namespace {
constexpr double kH = 1e-5;
constexpr double kTol = 1e-5;

void zero(ParamList& ps) {
  for (auto& [n, p] : ps) p->zero_grad();
}
}  // namespace

TEST(Linear, ForwardIsAffine) {
  CounterRng rng(1);
  Linear l(3, 2, rng);
  Mat x(1, 3);
  x << 1, 2, 3;
  const Mat y = l.forward(x);
  const Vec expect = l.weight().value * x.transpose() + l.bias().value;
  EXPECT_NEAR((y.transpose() - expect).norm(), 0.0, 1e-14);
}

TEST(Linear, InitWithinFanInBound) {
  CounterRng rng(2);
  Linear l(16, 4, rng);
  EXPECT_LE(l.weight().value.cwiseAbs().maxCoeff(), 1.0 / 4.0);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  CounterRng rng(3);
  Linear l(4, 3, rng);
  std::mt19937_64 gen(3);
  Mat x = random_mat(5, 4, gen);
  const Mat g = random_mat(5, 3, gen);
  ParamList ps;
  l.collect("lin", ps);
  zero(ps);
  const Mat dx = l.backward(x, g);
  auto loss = [&] { return l.forward(x).cwiseProduct(g).sum(); };
  check_param_grads(ps, loss, kH, kTol);
  check_input_grad(x, dx, loss, kH, kTol);
}

TEST(Conv1d, SamePaddingKeepsLength) {
  CounterRng rng(4);
  Conv1d c(3, 5, 5, 4, rng);
  EXPECT_EQ(c.forward(Mat::Ones(7, 3), nullptr).rows(), 7);
}

TEST(Conv1d, ImpulseResponseHonoursDilation) {
  CounterRng rng(5);
  Conv1d c(1, 1, 3, 2, rng);
  ParamList ps;
  c.collect("c", ps);
  ps[0].second->value << 1, 2, 3;  // taps at t-2, t, t+2
  ps[1].second->value.setZero();
  Mat x = Mat::Zero(9, 1);
  x(4, 0) = 1;
  const Mat y = c.forward(x, nullptr);
  Vec expect = Vec::Zero(9);
  expect(6) = 1;  // sees the impulse through its t-2 tap
  expect(4) = 2;
  expect(2) = 3;
  EXPECT_EQ((y.col(0) - expect).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Conv1d, GradientsMatchFiniteDifferences) {
  CounterRng rng(6);
  Conv1d c(3, 4, 3, 2, rng);
  std::mt19937_64 gen(6);
  Mat x = random_mat(8, 3, gen);
  const Mat g = random_mat(8, 4, gen);
  ParamList ps;
  c.collect("c", ps);
  zero(ps);
  Conv1d::Cache cache;
  c.forward(x, &cache);
  const Mat dx = c.backward(cache, g);
  auto loss = [&] { return c.forward(x, nullptr).cwiseProduct(g).sum(); };
  check_param_grads(ps, loss, kH, kTol);
  check_input_grad(x, dx, loss, kH, kTol);
}

TEST(ConvBlock, GradientsWithAndWithoutResidual) {
  for (int out : {3, 5}) {
    CounterRng rng(7);
    ConvBlock b(3, out, 3, 1, rng);
    std::mt19937_64 gen(7);
    Mat x = random_mat(6, 3, gen);
    const Mat g = random_mat(6, out, gen);
    ParamList ps;
    b.collect("b", ps);
    zero(ps);
    ConvBlock::Cache cache;
    b.forward(x, &cache);
    const Mat dx = b.backward(cache, g);
    auto loss = [&] { return b.forward(x, nullptr).cwiseProduct(g).sum(); };
    check_param_grads(ps, loss, kH, kTol);
    check_input_grad(x, dx, loss, kH, kTol);
  }
}

TEST(Gru, ReverseMatchesForwardOnFlippedInput) {
  CounterRng rng(8);
  Gru g(3, 4, rng);
  std::mt19937_64 gen(8);
  const Mat x = random_mat(6, 3, gen);
  const Mat rev = g.forward(x, true, nullptr);
  const Mat fwd_flipped = g.forward(x.colwise().reverse(), false, nullptr);
  EXPECT_LE((rev - fwd_flipped.colwise().reverse()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gru, StatesBoundedByOne) {
  CounterRng rng(9);
  Gru g(2, 3, rng);
  EXPECT_LE(g.forward(Mat::Constant(20, 2, 50.0), false, nullptr).cwiseAbs().maxCoeff(), 1.0);
}

TEST(Gru, GradientsMatchFiniteDifferences) {
  for (bool reverse : {false, true}) {
    CounterRng rng(10);
    Gru g(3, 4, rng);
    std::mt19937_64 gen(10);
    Mat x = random_mat(5, 3, gen);
    const Mat dh = random_mat(5, 4, gen);
    ParamList ps;
    g.collect("g", ps);
    zero(ps);
    Gru::Cache cache;
    g.forward(x, reverse, &cache);
    const Mat dx = g.backward(cache, dh);
    auto loss = [&] { return g.forward(x, reverse, nullptr).cwiseProduct(dh).sum(); };
    check_param_grads(ps, loss, kH, kTol);
    check_input_grad(x, dx, loss, kH, kTol);
  }
}

TEST(BiGru, FinalStateGradient) {
  CounterRng rng(11);
  BiGru b(2, 3, rng);
  std::mt19937_64 gen(11);
  Mat x = random_mat(5, 2, gen);
  const Vec w = Vec::LinSpaced(6, -1, 1);
  ParamList ps;
  b.collect("b", ps);
  zero(ps);
  BiGru::Cache cache;
  const Mat y = b.forward(x, &cache);
  EXPECT_EQ(y.cols(), 6);
  Mat dy = Mat::Zero(5, 6);
  BiGru::add_final_state_grad(dy, w, 3);
  const Mat dx = b.backward(cache, dy);
  auto loss = [&] { return BiGru::final_state(b.forward(x, nullptr), 3).dot(w); };
  check_param_grads(ps, loss, kH, kTol);
  check_input_grad(x, dx, loss, kH, kTol);
}

TEST(Trunk, GradientsMatchFiniteDifferences) {
  CounterRng rng(12);
  Trunk t(3, 4, 3, {1, 2}, 3, rng);
  std::mt19937_64 gen(12);
  Mat x = random_mat(7, 3, gen);
  const Mat g = random_mat(7, 6, gen);
  ParamList ps;
  t.collect("t", ps);
  zero(ps);
  Trunk::Cache cache;
  t.forward(x, &cache);
  const Mat dx = t.backward(cache, g);
  auto loss = [&] { return t.forward(x, nullptr).cwiseProduct(g).sum(); };
  check_param_grads(ps, loss, kH, 1e-4);
  check_input_grad(x, dx, loss, kH, 1e-4);
}

TEST(Adam, FirstStepMovesByLr) {
  Param p(2, 1);
  p.value << 1.0, -1.0;
  Adam opt({{"p", &p}}, {.lr = 0.01, .grad_clip = 100.0});
  p.grad << 0.5, -3.0;
  opt.step();
  // Bias-corrected first step is lr * sign(g).
  EXPECT_NEAR(p.value(0), 0.99, 1e-9);
  EXPECT_NEAR(p.value(1), -0.99, 1e-9);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ClipsGlobalNormAndReportsIt) {
  Param p(2, 1);
  Adam opt({{"p", &p}}, {.lr = 0.01, .grad_clip = 1.0});
  p.grad << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(opt.step(), 5.0);
  opt.zero_grad();
  EXPECT_EQ(p.grad.norm(), 0.0);
}

TEST(Adam, MinimizesQuadratic) {
  Param p(3, 1);
  p.value << 2, -3, 1;
  Adam opt({{"p", &p}}, {.lr = 0.05});
  for (int i = 0; i < 2000; ++i) {
    p.grad = 2 * p.value;
    opt.step();
  }
  EXPECT_LT(p.value.norm(), 1e-2);
}
