// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "afm/nn.hpp"
#include "afm/tensor.hpp"

namespace afm::worst_case {

/// Which quantity the inner maximization ascends.
///   kAdversarial     cross-entropy of S(x~) against hard labels
///   kAdversarialRsl  KL(T(x) || S(x~)) with the clean teacher output fixed
///   kMismatched      KL(T(x~) || S(x~)), gradient through both networks
///   kMismatchedNoTg  same value, teacher output treated as a constant
enum class Variant { kAdversarial, kAdversarialRsl, kMismatched, kMismatchedNoTg };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

struct Spec {
  Variant variant = Variant::kMismatched;
  int steps = 2;
  double step_size = 8.0 / 255.0;
  double eps_train = 8.0 / 255.0;
  double eps_add = 0.0;
  bool random_start = false;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  /// Evaluate the objective (and KL) at the final iterate. Costs one extra
  /// forward per network; disabled when timing pure generation.
  bool report_final = true;

  /// Defaults per variant and step count: step size 8/255 for 2-step
  /// mismatched search, 2/255 otherwise; random start only for the
  /// adversarial variants.
  static Spec defaults(Variant variant, int steps);
  void validate() const;
};

/// Forward/backward counts in units of whole-batch passes.
struct GradQueries {
  long teacher_fb = 0;
  long student_fb = 0;
  long teacher_forward = 0;
  long student_forward = 0;

  GradQueries& operator+=(const GradQueries& o);
};

struct Result {
  Tensor x_tilde;
  std::vector<double> objective;  // per example, the variant's own objective
  std::vector<double> kl;         // per example KL(T(x~) || S(x~))
  std::vector<double> eps_used;
  GradQueries queries;
};

/// Per-example radius eps_train + U[0, eps_add].
std::vector<double> sample_eps(const Spec& spec, std::size_t n, std::mt19937_64& rng);

/// Differentiable batch-mean objective of `variant` at x_tilde. Needs
/// `labels` for kAdversarial and `rsl_logits` (teacher logits on clean x)
/// for kAdversarialRsl. `teacher` may be null for kAdversarial.
Tensor objective(Variant variant, const Network* teacher, const Network& student, const Tensor& x_tilde,
                 const std::vector<int>* labels, const Tensor* rsl_logits, double temperature = 1.0);

/// Projected signed-gradient ascent inside the per-example l_inf ball.
/// `eps_override` fixes the radii instead of sampling them.
Result generate(const Spec& spec, const Network* teacher, const Network& student, const Tensor& x,
                const std::vector<int>* labels, const std::vector<double>* eps_override = nullptr);

/// Projects `x_tilde` onto {|x_tilde - x| <= eps_i} then clamps to [0,1].
void project(std::span<double> x_tilde, std::span<const double> x, const std::vector<double>& eps,
             std::size_t per_example);

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Exhaustive check of the inner maximization for one low-dimensional
/// example: KL(T||S) at all 2^d ball corners, at x, and at n_random uniform
/// interior points, everything clamped to [0,1]. Refuses d > 16.
struct OracleResult {
  double best = 0.0;
  double at_center = 0.0;
  std::vector<double> argmax;
};
OracleResult ball_oracle(const Network& teacher, const Network& student, const Tensor& x, double eps, int n_random,
                         std::uint64_t seed, double temperature = 1.0);

}  // namespace afm::worst_case
