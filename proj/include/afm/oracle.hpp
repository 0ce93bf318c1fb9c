// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afm/data.hpp"
#include "afm/nn.hpp"
#include "afm/worst_case.hpp"

namespace afm::oracle {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
/// Independent of the tape: f is evaluated on plain values only.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// ||a - b||_inf / max(1e-12, ||b||_inf)
double relative_error(std::span<const double> analytic, std::span<const double> reference);

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  int probes = 0;
  double threshold = 1e-4;
  bool passed() const { return max_rel_error < threshold; }
};

/// Compares tape gradients of `f` w.r.t. each of `inputs` against central
/// differences. `f` must build its scalar output from the given tensors.
GradCheckReport grad_check(const std::string& op, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, double h = 1e-5, double threshold = 1e-4);

/// Runs the built-in suite: every tensor op, both distillation losses and
/// the mismatched objective, each on `probes` random instances.
std::vector<GradCheckReport> grad_check_suite(int probes, std::uint64_t seed, double threshold = 1e-4);

struct CertifyReport {
  int trials = 0;
  double threshold = 0.8;
  int hits = 0;  // trials where PGD >= threshold * oracle max
  double fraction = 0.0;
  double mean_pgd = 0.0;
  double mean_oracle = 0.0;
  double max_oracle = 0.0;
  double max_pgd = 0.0;
  std::vector<double> ratios;  // pgd / oracle (1 when oracle is 0)
  /// Mean achieved KL per probed variant/steps pair, for ordering checks.
  std::vector<std::pair<std::string, double>> variant_means;
};

/// Certifies the inner maximization on low-dimensional inputs: for each trial
/// compares PGD(spec) against worst_case::ball_oracle at the same radius.
CertifyReport certify_inner_max(const Network& teacher, const Network& student, const worst_case::Spec& spec,
                                const Tensor& inputs, int n_trials, double threshold, int n_random,
                                std::uint64_t seed);

/// Mean KL(T(x~) || S(x~)) achieved by each spec over a batch.
std::vector<std::pair<std::string, double>> variant_kl_means(const Network& teacher, const Network& student,
                                                             const std::vector<worst_case::Spec>& specs,
                                                             const Tensor& x, const std::vector<int>& labels);

std::string spec_label(const worst_case::Spec& spec);

}  // namespace afm::oracle
