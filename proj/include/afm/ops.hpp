// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "afm/tensor.hpp"

namespace afm::ops {

// Every op below records onto the active tape when any input requires grad.

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

/// Dense layer: x[N,in] * w[out,in]^T + bias[out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Adds bias[C] to every row of x[N,C].
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Cross-correlation of input[N,C,H,W] with kernel[O,C,kh,kw], zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);

/// Adds bias[C] along the channel axis of x[N,C,H,W].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Non-overlapping k x k average pooling over [N,C,H,W]; H and W must divide by k.
Tensor avgpool2d(const Tensor& x, std::size_t k);

Tensor relu(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// [N, ...] -> [N, prod(...)]
Tensor flatten(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Batch mean of KL(softmax(p/t) || softmax(q/t)), scaled by t^2.
/// Differentiable in both logit tensors.
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double temperature = 1.0);

/// Per-row KL values (no tape, no t^2 factor unless asked).
std::vector<double> kl_rows(const Tensor& p_logits, const Tensor& q_logits, double temperature = 1.0);

/// Mean negative log-likelihood of integer labels under softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Mean cross-entropy against a target distribution[N,K] (constant).
Tensor soft_cross_entropy(const Tensor& logits, const Tensor& targets);

/// Per-row cross-entropy values (no tape).
std::vector<double> cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

/// Row-wise argmax of [N,K].
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace afm::ops
