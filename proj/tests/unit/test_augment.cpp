// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "afm/augment.hpp"
#include "afm/error.hpp"

using namespace afm;
using augment::AugPolicy;
using augment::Kind;

namespace {

Tensor images(std::size_t n, std::size_t c, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * c * side * side);
  for (auto& x : v) x = u(rng);
  return Tensor({n, c, side, side}, std::move(v));
}

AugPolicy policy(Kind k) {
  AugPolicy p;
  p.kind = k;
  p.cutout_len = 4;
  return p;
}

}  // namespace

TEST(Augment, NoneIsIdentity) {
  const auto x = images(4, 3, 8, 1);
  std::mt19937_64 rng(1);
  const auto y = augment::apply(policy(Kind::kNone), x, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Augment, RangeAndShapePreservedForEveryKind) {
  std::mt19937_64 rng(2);
  for (int b = 0; b < 2000; ++b) {
    const Kind k = static_cast<Kind>(b % 7);
    const auto x = images(3, 3, 8, 100 + static_cast<std::uint64_t>(b));
    const auto y = augment::apply(policy(k), x, rng);
    ASSERT_EQ(y.shape(), x.shape());
    for (double v : y.data()) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Augment, MixEndpointsAndConvexity) {
  const std::vector<double> a{0.1, 0.9, 0.5}, b{0.7, 0.2, 0.5};
  std::vector<double> out(3);
  augment::mix_into(a, b, 1.0, out);
  EXPECT_EQ(out, a);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const double lam = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    augment::mix_into(a, b, lam, out);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GE(out[i], std::min(a[i], b[i]) - 1e-12);
      EXPECT_LE(out[i], std::max(a[i], b[i]) + 1e-12);
    }
  }
}

TEST(Augment, MixupStaysWithinBatchEnvelope) {
  const auto x = images(6, 1, 4, 4);
  std::mt19937_64 rng(4);
  const auto y = augment::apply(policy(Kind::kMixup), x, rng);
  const std::size_t per = 16;
  for (std::size_t j = 0; j < per; ++j) {
    double lo = 1.0, hi = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      lo = std::min(lo, x[i * per + j]);
      hi = std::max(hi, x[i * per + j]);
    }
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_GE(y[i * per + j], lo - 1e-12);
      EXPECT_LE(y[i * per + j], hi + 1e-12);
    }
  }
}

TEST(Augment, CutmixBoxArea) {
  std::mt19937_64 rng(5);
  const auto empty = augment::cutmix_box(32, 32, 1.0, rng);
  EXPECT_EQ(empty.h * empty.w, 0u);
  for (int t = 0; t < 1000; ++t) {
    const double lam = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto b = augment::cutmix_box(32, 32, lam, rng);
    EXPECT_LE(b.y0 + b.h, 32u);
    EXPECT_LE(b.x0 + b.w, 32u);
    const double area = static_cast<double>(b.h * b.w);
    EXPECT_LE(std::abs(area - (1.0 - lam) * 1024.0), 32.0 + 1.0);
  }
}

TEST(Augment, ComboMemberFrequency) {
  AugPolicy p = policy(Kind::kCombo);
  p.combo_members = {Kind::kFlipCrop, Kind::kCutout};
  std::mt19937_64 rng(6);
  augment::AugStats stats;
  const auto x = images(1000, 1, 4, 7);
  for (int b = 0; b < 100; ++b) (void)augment::apply(p, x, rng, &stats);
  const double n = static_cast<double>(stats.member_a + stats.member_b);
  ASSERT_EQ(n, 100000.0);
  EXPECT_NEAR(static_cast<double>(stats.member_a) / n, 0.5, 0.01);
}

TEST(Augment, CutoutZeroesOneSquare) {
  const auto x = Tensor::full({1, 1, 8, 8}, 0.5);
  std::mt19937_64 rng(8);
  AugPolicy p = policy(Kind::kCutout);
  p.cutout_len = 3;
  for (int t = 0; t < 50; ++t) {
    const auto y = augment::apply(p, x, rng);
    const auto zeros = std::count(y.data().begin(), y.data().end(), 0.0);
    EXPECT_GE(zeros, 1);
    EXPECT_LE(zeros, 9);
  }
}

TEST(Augment, ValidationErrors) {
  const Shape img{3, 8, 8};
  AugPolicy p = policy(Kind::kCutout);
  p.cutout_len = 0;
  EXPECT_THROW(p.validate(img), ConfigError);
  p.cutout_len = 9;
  EXPECT_THROW(p.validate(img), ConfigError);
  p.cutout_len = 8;
  EXPECT_NO_THROW(p.validate(img));
  AugPolicy m = policy(Kind::kMixup);
  m.beta_alpha = 0.0;
  EXPECT_THROW(m.validate(img), ConfigError);
  EXPECT_THROW(policy(Kind::kFlipCrop).validate({10}), ConfigError);
  EXPECT_THROW(augment::kind_from_string("autoaugment"), ConfigError);
}

TEST(Augment, DescribeIsCanonicalAndComplete) {
  AugPolicy a = policy(Kind::kCutmix), b = policy(Kind::kCutmix);
  EXPECT_EQ(augment::describe(a), augment::describe(b));
  b.beta_alpha = 0.4;
  EXPECT_NE(augment::describe(a), augment::describe(b));
  EXPECT_NE(augment::describe(a).find("cutmix"), std::string::npos);
}

TEST(Augment, SampleBetaMoments) {
  std::mt19937_64 rng(9);
  double m = 0.0, m2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = augment::sample_beta(0.5, rng);
    m += v;
    m2 += v * v;
  }
  m /= n;
  const double var = m2 / n - m * m;
  // Beta(a,a): mean 1/2, variance 1 / (4 (2a + 1)).
  EXPECT_NEAR(m, 0.5, 0.01);
  EXPECT_NEAR(var, 1.0 / (4.0 * 2.0), 0.005);
}
