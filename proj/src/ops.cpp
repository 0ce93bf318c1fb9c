// SPDX-License-Identifier: Apache-2.0
#include "afm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "afm/error.hpp"

namespace afm::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MutMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Rows of length `len` strided by `inner` inside blocks of len*inner.
struct AxisLayout {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

// Stable log-softmax of a strided row.
void log_softmax_row(const double* in, double* out, std::size_t len, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, in[j * stride]);
  double s = 0.0;
  for (std::size_t j = 0; j < len; ++j) s += std::exp(in[j * stride] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < len; ++j) out[j * stride] = in[j * stride] - lse;
}

std::vector<double> log_softmax_2d(std::span<const double> logits, std::size_t n, std::size_t k, double inv_t) {
  std::vector<double> scaled(logits.begin(), logits.end());
  if (inv_t != 1.0) {
    for (auto& v : scaled) v *= inv_t;
  }
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) log_softmax_row(scaled.data() + i * k, out.data() + i * k, k, 1);
  return out;
}

void check_labels(const std::vector<int>& labels, std::size_t n, std::size_t k) {
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
}

// Unfolds one image [C,H,W] into columns [C*kh*kw, Ho*Wo].
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
  const std::size_t plane = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = cols + ((ch * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w);
            row[oy * wo + ox] = inside ? img[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* img) {
  const std::size_t plane = ho * wo;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = cols + ((ch * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            img[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.data(), m, k) * as_matrix(b.data(), k, n);
  Tensor result({m, n}, std::move(out));
  auto ai = a.impl(), bi = b.impl();
  Tape::record({&a, &b}, result, [ai, bi, m, k, n](const std::vector<double>& g) {
    const auto dy = as_matrix(g, m, n);
    if (ai->requires_grad) {
      as_matrix(ai->ensure_grad(), m, k).noalias() += dy * as_matrix(bi->data, k, n).transpose();
    }
    if (bi->requires_grad) {
      as_matrix(bi->ensure_grad(), k, n).noalias() += as_matrix(ai->data, m, k).transpose() * dy;
    }
  });
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_dim) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * out_dim);
  auto y = as_matrix(out, n, out_dim);
  y.noalias() = as_matrix(x.data(), n, in) * as_matrix(weight.data(), out_dim, in).transpose();
  const auto b = Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), static_cast<Eigen::Index>(out_dim));
  y.rowwise() += b;
  Tensor result({n, out_dim}, std::move(out));
  auto xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  Tape::record({&x, &weight, &bias}, result, [xi, wi, bi, n, in, out_dim](const std::vector<double>& g) {
    const auto dy = as_matrix(g, n, out_dim);
    if (xi->requires_grad) {
      as_matrix(xi->ensure_grad(), n, in).noalias() += dy * as_matrix(wi->data, out_dim, in);
    }
    if (wi->requires_grad) {
      as_matrix(wi->ensure_grad(), out_dim, in).noalias() += dy.transpose() * as_matrix(xi->data, n, in);
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      Eigen::Map<Eigen::RowVectorXd>(gb.data(), static_cast<Eigen::Index>(out_dim)) += dy.colwise().sum();
    }
  });
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (bias.dim(0) != c) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
  Tensor result(x.shape(), std::move(out));
  auto xi = x.impl(), bi = bias.impl();
  Tape::record({&x, &bias}, result, [xi, bi, n, c](const std::vector<double>& g) {
    if (xi->requires_grad) {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
  return result;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(c) +
                         " channels, kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(kernel.dim(1)));
  }
  const long span_h = static_cast<long>(h + 2 * padding) - static_cast<long>(kh);
  const long span_w = static_cast<long>(w + 2 * padding) - static_cast<long>(kw);
  if (span_h < 0 || span_w < 0) {
    throw DimensionError("conv2d: non-positive output size for input " + shape_str(input.shape()) + ", kernel " +
                         shape_str(kernel.shape()) + ", padding " + std::to_string(padding));
  }
  const std::size_t ho = static_cast<std::size_t>(span_h) / stride + 1;
  const std::size_t wo = static_cast<std::size_t>(span_w) / stride + 1;
  const std::size_t patch = c * kh * kw, plane = ho * wo;

  std::vector<double> out(n * o * plane);
  std::vector<double> cols(patch * plane);
  const auto kmat = as_matrix(kernel.data(), o, patch);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(input.data().data() + i * c * h * w, c, h, w, kh, kw, stride, padding, ho, wo, cols.data());
    MutMap(out.data() + i * o * plane, static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(plane)).noalias() =
        kmat * as_matrix(cols, patch, plane);
  }
  Tensor result({n, o, ho, wo}, std::move(out));
  auto xi = input.impl(), ki = kernel.impl();
  Tape::record({&input, &kernel}, result,
               [xi, ki, n, c, h, w, o, kh, kw, stride, padding, ho, wo, patch, plane](const std::vector<double>& g) {
                 std::vector<double> cols(patch * plane);
                 std::vector<double> dcols(patch * plane);
                 const auto kmat = as_matrix(ki->data, o, patch);
                 double* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
                 double* gk = ki->requires_grad ? ki->ensure_grad().data() : nullptr;
                 for (std::size_t i = 0; i < n; ++i) {
                   const ConstMap dy(g.data() + i * o * plane, static_cast<Eigen::Index>(o),
                                     static_cast<Eigen::Index>(plane));
                   if (gk != nullptr) {
                     im2col(xi->data.data() + i * c * h * w, c, h, w, kh, kw, stride, padding, ho, wo, cols.data());
                     MutMap(gk, static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(patch)).noalias() +=
                         dy * as_matrix(cols, patch, plane).transpose();
                   }
                   if (gx != nullptr) {
                     as_matrix(dcols, patch, plane).noalias() = kmat.transpose() * dy;
                     col2im_add(dcols.data(), c, h, w, kh, kw, stride, padding, ho, wo, gx + i * c * h * w);
                   }
                 }
               });
  return result;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 4, "add_channel_bias");
  require_rank(bias, 1, "add_channel_bias");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (bias.dim(0) != c) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " with bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += bias[ch];
    }
  Tensor result(x.shape(), std::move(out));
  auto xi = x.impl(), bi = bias.impl();
  Tape::record({&x, &bias}, result, [xi, bi, n, c, plane](const std::vector<double>& g) {
    if (xi->requires_grad) {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* p = g.data() + (i * c + ch) * plane;
          gb[ch] += std::accumulate(p, p + plane, 0.0);
        }
    }
  });
  return result;
}

Tensor avgpool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 4, "avgpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k == 0 || h % k != 0 || w % k != 0) {
    throw DimensionError("avgpool2d: window " + std::to_string(k) + " does not tile " + shape_str(x.shape()));
  }
  const std::size_t ho = h / k, wo = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(n * c * ho * wo, 0.0);
  const auto in = x.data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out[(p * ho + y / k) * wo + xx / k] += in[(p * h + y) * w + xx] * inv;
  Tensor result({n, c, ho, wo}, std::move(out));
  auto xi = x.impl();
  Tape::record({&x}, result, [xi, n, c, h, w, k, ho, wo, inv](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) gx[(p * h + y) * w + xx] += g[(p * ho + y / k) * wo + xx / k] * inv;
  });
  return result;
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  Tensor result(x.shape(), std::move(out));
  auto xi = x.impl();
  Tape::record({&x}, result, [xi](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->data[i] > 0.0) gx[i] += g[i];
  });
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  auto xi = x.impl();
  Tape::record({&x}, result, [xi](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return result;
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("flatten: scalar input");
  const std::size_t n = x.dim(0);
  return reshape(x, {n, n == 0 ? 0 : x.numel() / n});
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor result(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl();
  Tape::record({&a, &b}, result, [ai, bi](const std::vector<double>& g) {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto& gt = t->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor result(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl();
  Tape::record({&a, &b}, result, [ai, bi](const std::vector<double>& g) {
    if (ai->requires_grad) {
      auto& ga = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor result(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl();
  Tape::record({&a, &b}, result, [ai, bi](const std::vector<double>& g) {
    if (ai->requires_grad) {
      auto& ga = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    }
  });
  return result;
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  Tensor result(x.shape(), std::move(out));
  auto xi = x.impl();
  Tape::record({&x}, result, [xi, factor](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
  return result;
}

Tensor sum(const Tensor& x) {
  const double s = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  Tensor result = Tensor::scalar(s);
  auto xi = x.impl();
  Tape::record({&x}, result, [xi](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (auto& v : gx) v += g[0];
  });
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "log_softmax");
  std::vector<double> out(x.numel());
  const double* in = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t r = 0; r < l.inner; ++r) {
      const std::size_t base = o * l.len * l.inner + r;
      log_softmax_row(in + base, out.data() + base, l.len, l.inner);
    }
  Tensor result(x.shape(), std::move(out));
  auto xi = x.impl(), yi = result.impl();
  Tape::record({&x}, result, [xi, yi, l](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t r = 0; r < l.inner; ++r) {
        const std::size_t base = o * l.len * l.inner + r;
        double gs = 0.0;
        for (std::size_t j = 0; j < l.len; ++j) gs += g[base + j * l.inner];
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t idx = base + j * l.inner;
          gx[idx] += g[idx] - std::exp(yi->data[idx]) * gs;
        }
      }
  });
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto l = axis_layout(x.shape(), axis, "softmax");
  std::vector<double> out(x.numel());
  const double* in = x.data().data();
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t r = 0; r < l.inner; ++r) {
      const std::size_t base = o * l.len * l.inner + r;
      log_softmax_row(in + base, out.data() + base, l.len, l.inner);
      for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] = std::exp(out[base + j * l.inner]);
    }
  Tensor result(x.shape(), std::move(out));
  auto xi = x.impl(), yi = result.impl();
  Tape::record({&x}, result, [xi, yi, l](const std::vector<double>& g) {
    auto& gx = xi->ensure_grad();
    for (std::size_t o = 0; o < l.outer; ++o)
      for (std::size_t r = 0; r < l.inner; ++r) {
        const std::size_t base = o * l.len * l.inner + r;
        double dot = 0.0;
        for (std::size_t j = 0; j < l.len; ++j) dot += g[base + j * l.inner] * yi->data[base + j * l.inner];
        for (std::size_t j = 0; j < l.len; ++j) {
          const std::size_t idx = base + j * l.inner;
          gx[idx] += yi->data[idx] * (g[idx] - dot);
        }
      }
  });
  return result;
}

std::vector<double> kl_rows(const Tensor& p_logits, const Tensor& q_logits, double temperature) {
  require_rank(p_logits, 2, "kl_divergence");
  require_same_shape(p_logits, q_logits, "kl_divergence");
  if (!(temperature > 0.0)) throw ConfigError("kl_divergence: temperature must be > 0");
  const std::size_t n = p_logits.dim(0), k = p_logits.dim(1);
  const auto lp = log_softmax_2d(p_logits.data(), n, k, 1.0 / temperature);
  const auto lq = log_softmax_2d(q_logits.data(), n, k, 1.0 / temperature);
  std::vector<double> rows(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t idx = i * k + j;
      s += std::exp(lp[idx]) * (lp[idx] - lq[idx]);
    }
    rows[i] = s * temperature * temperature;
  }
  return rows;
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double temperature) {
  require_rank(p_logits, 2, "kl_divergence");
  require_same_shape(p_logits, q_logits, "kl_divergence");
  if (!(temperature > 0.0)) throw ConfigError("kl_divergence: temperature must be > 0");
  const std::size_t n = p_logits.dim(0), k = p_logits.dim(1);
  if (n == 0) throw DimensionError("kl_divergence: empty batch");
  const double inv_t = 1.0 / temperature;
  auto lp = log_softmax_2d(p_logits.data(), n, k, inv_t);
  auto lq = log_softmax_2d(q_logits.data(), n, k, inv_t);
  std::vector<double> row_kl(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t idx = i * k + j;
      s += std::exp(lp[idx]) * (lp[idx] - lq[idx]);
    }
    row_kl[i] = s;
    total += s;
  }
  const double t2 = temperature * temperature;
  Tensor result = Tensor::scalar(total * t2 / static_cast<double>(n));
  auto pi = p_logits.impl(), qi = q_logits.impl();
  Tape::record({&p_logits, &q_logits}, result,
               [pi, qi, lp = std::move(lp), lq = std::move(lq), row_kl = std::move(row_kl), n, k,
                temperature](const std::vector<double>& g) {
                 // d/dz (t^2/N * KL(z/t)) = t/N * dKL/d(z/t)
                 const double coef = g[0] * temperature / static_cast<double>(n);
                 if (pi->requires_grad) {
                   auto& gp = pi->ensure_grad();
                   for (std::size_t i = 0; i < n; ++i)
                     for (std::size_t j = 0; j < k; ++j) {
                       const std::size_t idx = i * k + j;
                       gp[idx] += coef * std::exp(lp[idx]) * (lp[idx] - lq[idx] - row_kl[i]);
                     }
                 }
                 if (qi->requires_grad) {
                   auto& gq = qi->ensure_grad();
                   for (std::size_t idx = 0; idx < n * k; ++idx) gq[idx] += coef * (std::exp(lq[idx]) - std::exp(lp[idx]));
                 }
               });
  return result;
}

std::vector<double> cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  check_labels(labels, n, k);
  const auto ls = log_softmax_2d(logits.data(), n, k, 1.0);
  std::vector<double> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = -ls[i * k + static_cast<std::size_t>(labels[i])];
  return rows;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  check_labels(labels, n, k);
  if (n == 0) throw DimensionError("cross_entropy: empty batch");
  auto ls = log_softmax_2d(logits.data(), n, k, 1.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total -= ls[i * k + static_cast<std::size_t>(labels[i])];
  Tensor result = Tensor::scalar(total / static_cast<double>(n));
  auto li = logits.impl();
  Tape::record({&logits}, result, [li, ls = std::move(ls), labels, n, k](const std::vector<double>& g) {
    auto& gl = li->ensure_grad();
    const double coef = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double onehot = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
        gl[i * k + j] += coef * (std::exp(ls[i * k + j]) - onehot);
      }
  });
  return result;
}

Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets) {
  require_rank(logits, 2, "soft_cross_entropy");
  require_same_shape(logits, targets, "soft_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw DimensionError("soft_cross_entropy: empty batch");
  auto ls = log_softmax_2d(logits.data(), n, k, 1.0);
  double total = 0.0;
  for (std::size_t idx = 0; idx < n * k; ++idx) total -= targets[idx] * ls[idx];
  Tensor result = Tensor::scalar(total / static_cast<double>(n));
  auto li = logits.impl(), ti = targets.impl();
  Tape::record({&logits}, result, [li, ti, ls = std::move(ls), n, k](const std::vector<double>& g) {
    auto& gl = li->ensure_grad();
    const double coef = g[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double tsum = 0.0;
      for (std::size_t j = 0; j < k; ++j) tsum += ti->data[i * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t idx = i * k + j;
        gl[idx] += coef * (tsum * std::exp(ls[idx]) - ti->data[idx]);
      }
    }
  });
  return result;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace afm::ops
