// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "afm/error.hpp"
#include "afm/ops.hpp"
#include "afm/oracle.hpp"
#include "afm/worst_case.hpp"

using namespace afm;
using worst_case::Spec;
using worst_case::Variant;

namespace {

Tensor rand01(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(s), std::move(v));
}

std::vector<double> input_grad(Variant v, const Network& t, const Network& s, const Tensor& x) {
  Tensor leaf = x.detach().set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  tape.backward(worst_case::objective(v, &t, s, leaf, nullptr, nullptr));
  return leaf.grad();
}

}  // namespace

TEST(SampleEps, ZeroAddIsConstant) {
  Spec s;
  s.eps_add = 0.0;
  std::mt19937_64 rng(1);
  for (double e : worst_case::sample_eps(s, 100, rng)) EXPECT_EQ(e, s.eps_train);
}

TEST(SampleEps, RangeAndMean) {
  Spec s;
  s.eps_train = 8.0 / 255.0;
  s.eps_add = 6.0 / 255.0;
  std::mt19937_64 rng(2);
  const auto eps = worst_case::sample_eps(s, 100000, rng);
  double mean = 0.0;
  for (double e : eps) {
    EXPECT_GE(e, 8.0 / 255.0);
    EXPECT_LE(e, 14.0 / 255.0);
    mean += e;
  }
  mean /= static_cast<double>(eps.size());
  const double expect = s.eps_train + s.eps_add / 2.0;
  EXPECT_NEAR(mean, expect, 0.01 * expect);
}

TEST(Objective, MismatchedWithIdenticalNetsIsZeroWithZeroGradient) {
  const auto net = build_network("mlp:8", {5}, 3, 1);
  const auto x = rand01({4, 5}, 1);
  EXPECT_NEAR(worst_case::objective(Variant::kMismatched, &net, net, x, nullptr, nullptr).item(), 0.0, 1e-15);
  for (double g : input_grad(Variant::kMismatched, net, net, x)) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Objective, TeacherGradientChangesGradientNotValue) {
  const auto t = build_network("mlp:8", {5}, 3, 1);
  const auto s = build_network("mlp:8", {5}, 3, 2);
  const auto x = rand01({4, 5}, 2);
  const double a = worst_case::objective(Variant::kMismatched, &t, s, x, nullptr, nullptr).item();
  const double b = worst_case::objective(Variant::kMismatchedNoTg, &t, s, x, nullptr, nullptr).item();
  EXPECT_NEAR(a, b, 1e-12);
  const auto ga = input_grad(Variant::kMismatched, t, s, x);
  const auto gb = input_grad(Variant::kMismatchedNoTg, t, s, x);
  double diff = 0.0;
  for (std::size_t i = 0; i < ga.size(); ++i) diff = std::max(diff, std::abs(ga[i] - gb[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Objective, MismatchedInputGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = build_network("mlp:6", {4}, 3, 10 + seed);
    const auto s = build_network("mlp:6", {4}, 3, 20 + seed);
    const auto x = rand01({3, 4}, seed);
    const auto g = input_grad(Variant::kMismatched, t, s, x);
    const auto fd = oracle::fd_gradient(
        [&](const Tensor& z) { return worst_case::objective(Variant::kMismatched, &t, s, z, nullptr, nullptr).item(); },
        x);
    EXPECT_LT(oracle::relative_error(g, fd.data()), 1e-4);
  }
}

TEST(Objective, MissingInputsForVariant) {
  const auto s = build_network("mlp:4", {3}, 2, 1);
  const auto x = rand01({2, 3}, 1);
  EXPECT_THROW(worst_case::objective(Variant::kAdversarial, nullptr, s, x, nullptr, nullptr), ConfigError);
  EXPECT_THROW(worst_case::objective(Variant::kAdversarialRsl, &s, s, x, nullptr, nullptr), ConfigError);
  EXPECT_THROW(worst_case::objective(Variant::kMismatched, nullptr, s, x, nullptr, nullptr), ConfigError);
}

TEST(Generate, FlatLandscapeLeavesInputUnchanged) {
  const auto net = build_network("mlp:8", {5}, 3, 1);
  const auto x = rand01({4, 5}, 3);
  auto spec = Spec::defaults(Variant::kMismatched, 10);
  spec.random_start = false;
  const auto res = worst_case::generate(spec, &net, net, x, nullptr);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(res.x_tilde[i], x[i]);
}

TEST(Generate, ProjectionCapsTwoLargeSteps) {
  const auto t = build_network("mlp:8", {6}, 3, 1);
  const auto s = build_network("mlp:8", {6}, 3, 2);
  auto x = Tensor::full({8, 6}, 0.5);
  auto spec = Spec::defaults(Variant::kMismatched, 2);
  ASSERT_DOUBLE_EQ(spec.step_size, 8.0 / 255.0);
  const auto res = worst_case::generate(spec, &t, s, x, nullptr);
  double linf = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) linf = std::max(linf, std::abs(res.x_tilde[i] - x[i]));
  EXPECT_LE(linf, 8.0 / 255.0 + 1e-12);
  EXPECT_GT(linf, 0.0);
}

TEST(Generate, QueryCountsFollowTheCostModel) {
  const auto t = build_network("mlp:8", {6}, 3, 1);
  const auto s = build_network("mlp:8", {6}, 3, 2);
  const auto x = rand01({4, 6}, 5);
  const std::vector<int> y{0, 1, 2, 0};
  auto mis = Spec::defaults(Variant::kMismatched, 2);
  mis.report_final = false;
  auto q = worst_case::generate(mis, &t, s, x, nullptr).queries;
  EXPECT_EQ(q.teacher_fb, 2);
  EXPECT_EQ(q.student_fb, 2);
  EXPECT_EQ(q.teacher_forward, 0);
  auto adv = Spec::defaults(Variant::kAdversarial, 10);
  adv.report_final = false;
  q = worst_case::generate(adv, nullptr, s, x, &y).queries;
  EXPECT_EQ(q.teacher_fb, 0);
  EXPECT_EQ(q.student_fb, 10);
  auto notg = Spec::defaults(Variant::kMismatchedNoTg, 3);
  notg.report_final = false;
  q = worst_case::generate(notg, &t, s, x, nullptr).queries;
  EXPECT_EQ(q.teacher_fb, 0);
  EXPECT_EQ(q.teacher_forward, 3);
  EXPECT_EQ(q.student_fb, 3);
  auto rsl = Spec::defaults(Variant::kAdversarialRsl, 10);
  rsl.report_final = false;
  q = worst_case::generate(rsl, &t, s, x, nullptr).queries;
  EXPECT_EQ(q.teacher_fb, 0);
  EXPECT_EQ(q.teacher_forward, 1);
  EXPECT_EQ(q.student_fb, 10);
}

TEST(Generate, DefaultsPerVariant) {
  EXPECT_FALSE(Spec::defaults(Variant::kMismatched, 2).random_start);
  EXPECT_TRUE(Spec::defaults(Variant::kAdversarial, 10).random_start);
  EXPECT_TRUE(Spec::defaults(Variant::kAdversarialRsl, 10).random_start);
  EXPECT_DOUBLE_EQ(Spec::defaults(Variant::kMismatched, 10).step_size, 2.0 / 255.0);
  EXPECT_DOUBLE_EQ(Spec::defaults(Variant::kAdversarial, 10).step_size, 2.0 / 255.0);
}

TEST(Generate, SoundnessFuzz) {
  std::mt19937_64 rng(7);
  const auto t = build_network("mlp:8", {6}, 3, 1);
  const auto s = build_network("mlp:8", {6}, 3, 2);
  for (int trial = 0; trial < 300; ++trial) {
    Spec spec = Spec::defaults(static_cast<Variant>(trial % 4), 1 + trial % 5);
    spec.eps_train = std::uniform_real_distribution<double>(0.001, 0.2)(rng);
    spec.eps_add = std::uniform_real_distribution<double>(0.0, 0.1)(rng);
    spec.step_size = std::uniform_real_distribution<double>(0.001, 0.3)(rng);
    spec.random_start = trial % 3 == 0;
    spec.seed = static_cast<std::uint64_t>(trial);
    const auto x = rand01({5, 6}, 1000 + static_cast<std::uint64_t>(trial));
    const std::vector<int> y{0, 1, 2, 1, 0};
    const auto r = worst_case::generate(spec, &t, s, x, &y);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(r.eps_used[i], spec.eps_train);
      EXPECT_LE(r.eps_used[i], spec.eps_train + spec.eps_add);
      for (std::size_t j = 0; j < 6; ++j) {
        const double v = r.x_tilde[i * 6 + j];
        EXPECT_LE(std::abs(v - x[i * 6 + j]), r.eps_used[i] + 1e-9);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(Generate, DeterministicGivenSeed) {
  const auto t = build_network("mlp:8", {6}, 3, 1);
  const auto s = build_network("mlp:8", {6}, 3, 2);
  const auto x = rand01({4, 6}, 5);
  auto spec = Spec::defaults(Variant::kMismatched, 3);
  spec.random_start = true;
  spec.eps_add = 4.0 / 255.0;
  spec.seed = 99;
  const auto a = worst_case::generate(spec, &t, s, x, nullptr);
  const auto b = worst_case::generate(spec, &t, s, x, nullptr);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(a.x_tilde[i], b.x_tilde[i]);
}

TEST(Sign, ZeroMapsToZero) {
  EXPECT_EQ(worst_case::sign(0.0), 0.0);
  EXPECT_EQ(worst_case::sign(-0.0), 0.0);
  EXPECT_EQ(worst_case::sign(1e-300), 1.0);
  EXPECT_EQ(worst_case::sign(-3.0), -1.0);
}

TEST(BallOracle, IdenticalNetsGiveZero) {
  const auto net = build_network("mlp:8", {4}, 3, 1);
  const auto r = worst_case::ball_oracle(net, net, rand01({1, 4}, 1), 0.1, 50, 1);
  EXPECT_NEAR(r.best, 0.0, 1e-15);
}

TEST(BallOracle, AtLeastTheCentreAndRefusesHighDimension) {
  const auto t = build_network("mlp:8", {2}, 3, 1);
  const auto s = build_network("mlp:8", {2}, 3, 2);
  const auto x = rand01({1, 2}, 3);
  const auto r = worst_case::ball_oracle(t, s, x, 0.05, 100, 2);
  const double centre = ops::kl_rows(t.forward(x), s.forward(x))[0];
  EXPECT_NEAR(r.at_center, centre, 1e-15);
  EXPECT_GE(r.best, centre);
  const auto big_t = build_network("mlp:4", {17}, 2, 1);
  EXPECT_THROW(worst_case::ball_oracle(big_t, big_t, rand01({1, 17}, 1), 0.1, 1, 1), ConfigError);
}

TEST(BallOracle, PgdOnRandomSmallMlpsReachesMostOfTheOracle) {
  int hits = 0;
  const int trials = 40;
  for (int k = 0; k < trials; ++k) {
    const auto t = build_network("mlp:16", {10}, 3, 100 + k);
    const auto s = build_network("mlp:16", {10}, 3, 200 + k);
    const auto x = rand01({1, 10}, 300 + k);
    auto spec = Spec::defaults(Variant::kMismatched, 10);
    const std::vector<double> eps{8.0 / 255.0};
    const auto pgd = worst_case::generate(spec, &t, s, x, nullptr, &eps);
    const auto orc = worst_case::ball_oracle(t, s, x, eps[0], 256, k);
    hits += pgd.kl[0] >= 0.8 * orc.best;
  }
  EXPECT_GE(hits, static_cast<int>(0.9 * trials));
}
