#include <gtest/gtest.h>

#include <random>

#include "fd_check.hpp"
#include "savc/error.hpp"
#include "savc/losses.hpp"
#include "support.hpp"

using namespace savc;
using savc::testing::random_mat;
using savc::testing::rel_err;

TEST(LossRec, Basics) {
  const Mat m = Mat::Random(6, 4);
  EXPECT_EQ(loss_rec(m, m), 0.0);
  EXPECT_NEAR(loss_rec(m.array() + 0.1, m), 0.01, 1e-12);
  EXPECT_THROW(loss_rec(m, Mat::Zero(6, 3)), ValidationError);
}

TEST(LossRec, MatchesDirectSum) {
  std::mt19937_64 gen(1);
  const Mat a = random_mat(64, 20, gen), b = random_mat(64, 20, gen);
  double s = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 20; ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  EXPECT_LT(rel_err(loss_rec(a, b), s / (64 * 20)), 1e-6);
}

TEST(LossDis, Basics) {
  const Mat z = Mat::Random(5, 4);
  EXPECT_EQ(loss_dis(z, z), 0.0);
  EXPECT_NEAR(loss_dis(z.array() + 2.0, z), 4.0, 1e-12);
  EXPECT_THROW(loss_dis(z, Mat::Zero(4, 4)), ValidationError);
}

TEST(LossDis, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(2);
  Mat s = random_mat(7, 4, gen);
  const Mat t = random_mat(7, 4, gen);
  const Mat g = loss_dis_grad(s, t);
  savc::testing::check_input_grad(s, g, [&] { return loss_dis(s, t); }, 1e-5, 1e-4);
}

TEST(LossRec, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(3);
  Mat a = random_mat(5, 3, gen);
  const Mat b = random_mat(5, 3, gen);
  const Mat g = loss_rec_grad(a, b);
  savc::testing::check_input_grad(a, g, [&] { return loss_rec(a, b); }, 1e-5, 1e-4);
}

TEST(LossPred, Basics) {
  const Vec y = one_hot(0, 5);
  EXPECT_EQ(loss_pred(y, y, y), 0.0);
  EXPECT_DOUBLE_EQ(loss_pred(y, Vec::Zero(5), Vec::Zero(5)), 2.0);
  Vec bad = y;
  bad(1) = 0.5;
  EXPECT_THROW(loss_pred(bad, y, y), ValidationError);
  EXPECT_THROW(loss_pred(Vec::Zero(5), y, y), ValidationError);
  EXPECT_THROW(loss_pred(Vec::Ones(5), y, y), ValidationError);
  EXPECT_THROW(one_hot(5, 5), ValidationError);
}

TEST(LossPred, MatchesDirectSum) {
  std::mt19937_64 gen(4);
  const Vec y = one_hot(2, 5);
  const Vec t = random_mat(5, 1, gen).col(0), s = random_mat(5, 1, gen).col(0);
  double d = 0;
  for (int k = 0; k < 5; ++k) d += (y(k) - t(k)) * (y(k) - t(k)) + (y(k) - s(k)) * (y(k) - s(k));
  EXPECT_LT(rel_err(loss_pred(y, t, s), d), 1e-6);
  const Vec g = loss_pred_grad(y, s);
  for (int k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(g(k), 2 * (s(k) - y(k)));
}

TEST(LossTotal, Weighting) {
  TrainConfig cfg;
  EXPECT_NEAR(loss_total({2, 1, 0.5, 0}, cfg), 2.55, 1e-12);
  EXPECT_EQ(loss_total({0, 0, 0, 0}, cfg), 0.0);
  cfg.alpha = 0;
  cfg.beta = 0;
  cfg.lambda = 1;
  EXPECT_EQ(loss_total({3, 4, 0.7, 0}, cfg), 0.7);
  cfg.cons_weight = 2;
  EXPECT_EQ(loss_total({3, 4, 0.7, 0.25}, cfg), 1.2);
}

TEST(TrainConfig, DefaultWeights) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.alpha, 1.0);
  EXPECT_EQ(cfg.beta, 0.5);
  EXPECT_EQ(cfg.lambda, 0.1);
}
