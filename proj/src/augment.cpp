// SPDX-License-Identifier: Apache-2.0
#include "afm/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "afm/error.hpp"

namespace afm::augment {
namespace {

struct Geometry {
  std::size_t n = 0, c = 0, h = 0, w = 0, per_example = 0;
  bool image = false;
};

Geometry geometry(const Tensor& batch) {
  Geometry g;
  g.n = batch.rank() > 0 ? batch.dim(0) : 0;
  g.per_example = g.n == 0 ? 0 : batch.numel() / g.n;
  if (batch.rank() == 4) {
    g.image = true;
    g.c = batch.dim(1);
    g.h = batch.dim(2);
    g.w = batch.dim(3);
  }
  return g;
}

bool needs_image(Kind k) { return k != Kind::kNone && k != Kind::kMixup; }

void flip_crop(std::span<double> img, const Geometry& g, std::size_t pad, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  const bool flip = coin(rng);
  std::uniform_int_distribution<std::size_t> off(0, 2 * pad);
  const std::size_t dy = off(rng), dx = off(rng);
  const std::vector<double> src(img.begin(), img.end());
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t y = 0; y < g.h; ++y)
      for (std::size_t x = 0; x < g.w; ++x) {
        // Position inside the zero-padded canvas, then back to source coords.
        const long sy = static_cast<long>(y + dy) - static_cast<long>(pad);
        long sx = static_cast<long>(x + dx) - static_cast<long>(pad);
        double v = 0.0;
        if (sy >= 0 && sx >= 0 && sy < static_cast<long>(g.h) && sx < static_cast<long>(g.w)) {
          if (flip) sx = static_cast<long>(g.w) - 1 - sx;
          v = src[(ch * g.h + static_cast<std::size_t>(sy)) * g.w + static_cast<std::size_t>(sx)];
        }
        img[(ch * g.h + y) * g.w + x] = v;
      }
}

void cutout(std::span<double> img, const Geometry& g, std::size_t len, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> cy_d(0, g.h - 1), cx_d(0, g.w - 1);
  const auto cy = static_cast<long>(cy_d(rng)), cx = static_cast<long>(cx_d(rng));
  const long half = static_cast<long>(len) / 2;
  const auto y0 = static_cast<std::size_t>(std::max(0L, cy - half));
  const auto y1 = static_cast<std::size_t>(std::min(static_cast<long>(g.h), cy - half + static_cast<long>(len)));
  const auto x0 = static_cast<std::size_t>(std::max(0L, cx - half));
  const auto x1 = static_cast<std::size_t>(std::min(static_cast<long>(g.w), cx - half + static_cast<long>(len)));
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x) img[(ch * g.h + y) * g.w + x] = 0.0;
}

void paste_box(std::span<double> img, std::span<const double> partner, const Geometry& g, const Box& b) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t y = b.y0; y < b.y0 + b.h; ++y)
      for (std::size_t x = b.x0; x < b.x0 + b.w; ++x) {
        const std::size_t idx = (ch * g.h + y) * g.w + x;
        img[idx] = partner[idx];
      }
}

void rand_augment(std::span<double> img, const Geometry& g, int n_ops, int magnitude, std::mt19937_64& rng) {
  std::vector<RandOp> ops{RandOp::kContrast, RandOp::kBrightness, RandOp::kTranslate};
  if (g.h == g.w) ops.push_back(RandOp::kRotate90);
  std::uniform_int_distribution<std::size_t> pick(0, ops.size() - 1);
  for (int i = 0; i < n_ops; ++i) rand_op(ops[pick(rng)], magnitude, img, g.c, g.h, g.w, rng);
}

// Augments example i of `src` in place within `out` (which starts as a copy of src).
void apply_one(Kind kind, const AugPolicy& p, const Tensor& src, const Geometry& g, std::size_t i,
               std::size_t partner, std::span<double> out, std::mt19937_64& rng) {
  const auto all = src.data();
  const auto self = all.subspan(i * g.per_example, g.per_example);
  const auto other = all.subspan(partner * g.per_example, g.per_example);
  switch (kind) {
    case Kind::kNone:
      break;
    case Kind::kFlipCrop:
      flip_crop(out, g, p.crop_pad, rng);
      break;
    case Kind::kCutout:
      cutout(out, g, p.cutout_len, rng);
      break;
    case Kind::kMixup:
      mix_into(self, other, sample_beta(p.beta_alpha, rng), out);
      break;
    case Kind::kCutmix:
      paste_box(out, other, g, cutmix_box(g.h, g.w, sample_beta(p.beta_alpha, rng), rng));
      break;
    case Kind::kRandAugLite:
      rand_augment(out, g, p.randaug_n, p.randaug_m, rng);
      break;
    case Kind::kCombo:
      throw ConfigError("combo cannot nest another combo");
  }
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::kNone: return "none";
    case Kind::kFlipCrop: return "flip_crop";
    case Kind::kCutout: return "cutout";
    case Kind::kMixup: return "mixup";
    case Kind::kCutmix: return "cutmix";
    case Kind::kRandAugLite: return "randaug_lite";
    case Kind::kCombo: return "combo";
  }
  return "?";
}

Kind kind_from_string(const std::string& name) {
  for (Kind k : {Kind::kNone, Kind::kFlipCrop, Kind::kCutout, Kind::kMixup, Kind::kCutmix, Kind::kRandAugLite,
                 Kind::kCombo}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown augmentation '" + name + "'");
}

void AugPolicy::validate(const Shape& example_dims) const {
  const bool image = example_dims.size() == 3;
  auto check_kind = [&](Kind k) {
    if (needs_image(k) && !image) {
      throw ConfigError("augmentation '" + to_string(k) + "' needs [C,H,W] examples, got " + shape_str(example_dims));
    }
    if (k == Kind::kCutout) {
      const std::size_t side = std::min(example_dims[1], example_dims[2]);
      if (cutout_len == 0 || cutout_len > side) {
        throw ConfigError("cutout_len " + std::to_string(cutout_len) + " must be in [1, " + std::to_string(side) + "]");
      }
    }
    if ((k == Kind::kMixup || k == Kind::kCutmix) && !(beta_alpha > 0.0)) {
      throw ConfigError("beta_alpha must be > 0 for mixup/cutmix");
    }
    if (k == Kind::kRandAugLite && (randaug_n < 0 || randaug_m < 0 || randaug_m > 10)) {
      throw ConfigError("randaug_n must be >= 0 and randaug_m in [0,10]");
    }
  };
  if (kind == Kind::kCombo) {
    if (!(combo_p >= 0.0 && combo_p <= 1.0)) throw ConfigError("combo_p must be in [0,1]");
    for (Kind m : combo_members) {
      if (m == Kind::kCombo) throw ConfigError("combo members cannot be combo");
      check_kind(m);
    }
  } else {
    check_kind(kind);
  }
}

std::string describe(const AugPolicy& p) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(p.kind) << "(crop_pad=" << p.crop_pad << ";cutout_len=" << p.cutout_len
     << ";beta_alpha=" << p.beta_alpha << ";randaug_n=" << p.randaug_n << ";randaug_m=" << p.randaug_m
     << ";combo_p=" << p.combo_p << ";combo_members=" << to_string(p.combo_members[0]) << "+"
     << to_string(p.combo_members[1]) << ";stream=" << p.stream << ")";
  return os.str();
}

Tensor apply(const AugPolicy& policy, const Tensor& batch, std::mt19937_64& rng, AugStats* stats) {
  const Geometry g = geometry(batch);
  if (g.n == 0) return batch.detach();
  policy.validate(Shape(batch.shape().begin() + 1, batch.shape().end()));
  std::vector<double> out(batch.data().begin(), batch.data().end());

  std::vector<std::size_t> partner(g.n);
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  const bool mixing = policy.kind == Kind::kMixup || policy.kind == Kind::kCutmix || policy.kind == Kind::kCombo;
  if (mixing) std::shuffle(partner.begin(), partner.end(), rng);

  std::bernoulli_distribution pick_a(policy.combo_p);
  for (std::size_t i = 0; i < g.n; ++i) {
    std::span<double> ex(out.data() + i * g.per_example, g.per_example);
    Kind kind = policy.kind;
    if (kind == Kind::kCombo) {
      const bool a = pick_a(rng);
      kind = policy.combo_members[a ? 0 : 1];
      if (stats) ++(a ? stats->member_a : stats->member_b);
    }
    apply_one(kind, policy, batch, g, i, partner[i], ex, rng);
  }
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return Tensor(batch.shape(), std::move(out));
}

void mix_into(std::span<const double> a, std::span<const double> b, double lam, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lam * a[i] + (1.0 - lam) * b[i];
}

Box cutmix_box(std::size_t h, std::size_t w, double lam, std::mt19937_64& rng) {
  const double ratio = std::sqrt(std::clamp(1.0 - lam, 0.0, 1.0));
  Box b;
  b.h = std::min(h, static_cast<std::size_t>(std::lround(static_cast<double>(h) * ratio)));
  b.w = std::min(w, static_cast<std::size_t>(std::lround(static_cast<double>(w) * ratio)));
  std::uniform_int_distribution<std::size_t> ys(0, h - b.h), xs(0, w - b.w);
  b.y0 = ys(rng);
  b.x0 = xs(rng);
  return b;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  if (alpha == 1.0) return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng), b = gamma(rng);
  return a + b > 0.0 ? a / (a + b) : 0.5;
}

void rand_op(RandOp op, int magnitude, std::span<double> image, std::size_t c, std::size_t h, std::size_t w,
             std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  const double m = static_cast<double>(magnitude) / 10.0;
  const std::size_t plane = h * w;
  switch (op) {
    case RandOp::kContrast: {
      const double factor = coin(rng) ? 1.0 + m : 1.0 - m;
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto p = image.subspan(ch * plane, plane);
        const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(plane);
        for (auto& v : p) v = std::clamp(mean + factor * (v - mean), 0.0, 1.0);
      }
      break;
    }
    case RandOp::kBrightness: {
      const double shift = (coin(rng) ? 0.5 : -0.5) * m;
      for (auto& v : image) v = std::clamp(v + shift, 0.0, 1.0);
      break;
    }
    case RandOp::kTranslate: {
      const auto pixels = static_cast<long>(std::lround(0.15 * m * static_cast<double>(std::max(h, w))));
      const bool horizontal = coin(rng);
      const long shift = coin(rng) ? pixels : -pixels;
      const long dy = horizontal ? 0 : shift, dx = horizontal ? shift : 0;
      const std::vector<double> src(image.begin(), image.end());
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
            image[ch * plane + y * w + x] =
                inside ? src[ch * plane + static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : 0.0;
          }
      break;
    }
    case RandOp::kRotate90: {
      if (h != w) throw DimensionError("rotate90 needs square images");
      const int turns = std::uniform_int_distribution<int>(1, 3)(rng);
      std::vector<double> src(image.begin(), image.end());
      for (int t = 0; t < turns; ++t) {
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) image[ch * plane + x * w + (h - 1 - y)] = src[ch * plane + y * w + x];
        src.assign(image.begin(), image.end());
      }
      break;
    }
  }
}

}  // namespace afm::augment
