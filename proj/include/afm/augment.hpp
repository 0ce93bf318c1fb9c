// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>

#include "afm/tensor.hpp"

namespace afm::augment {

enum class Kind { kNone, kFlipCrop, kCutout, kMixup, kCutmix, kRandAugLite, kCombo };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct AugPolicy {
  Kind kind = Kind::kNone;
  std::size_t crop_pad = 4;
  std::size_t cutout_len = 16;
  double beta_alpha = 1.0;
  int randaug_n = 1;
  int randaug_m = 2;
  double combo_p = 0.5;
  std::array<Kind, 2> combo_members{Kind::kRandAugLite, Kind::kCutmix};
  std::uint64_t stream = 0;

  void validate(const Shape& example_dims) const;
};

/// Canonical one-line description including every parameter.
std::string describe(const AugPolicy& policy);

struct AugStats {
  std::size_t member_a = 0;
  std::size_t member_b = 0;
};

/// Augments a batch [N, ...] in [0,1]. The returned tensor is the single
/// view of each example shared by teacher and student.
Tensor apply(const AugPolicy& policy, const Tensor& batch, std::mt19937_64& rng, AugStats* stats = nullptr);

// Building blocks, exposed for direct testing.

/// lam * a + (1 - lam) * b, elementwise.
void mix_into(std::span<const double> a, std::span<const double> b, double lam, std::span<double> out);

struct Box {
  std::size_t y0 = 0, x0 = 0, h = 0, w = 0;
};

/// Cutmix rectangle of area fraction (1 - lam), fully inside an h x w image.
Box cutmix_box(std::size_t h, std::size_t w, double lam, std::mt19937_64& rng);

/// Draws from Beta(alpha, alpha).
double sample_beta(double alpha, std::mt19937_64& rng);

enum class RandOp { kContrast, kBrightness, kTranslate, kRotate90 };
/// Applies one rand-augment-lite op at magnitude bucket m (0..10) to an image [C,H,W].
void rand_op(RandOp op, int magnitude, std::span<double> image, std::size_t c, std::size_t h, std::size_t w,
             std::mt19937_64& rng);

}  // namespace afm::augment
