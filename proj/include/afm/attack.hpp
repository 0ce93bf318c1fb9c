// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afm/data.hpp"
#include "afm/nn.hpp"

namespace afm::attack {

enum class Kind { kClean, kFgsm, kPgd };

struct AttackConfig {
  std::string name = "clean";
  Kind kind = Kind::kClean;
  double eps_test = 8.0 / 255.0;
  int steps = 0;
  double step_size = 0.0;
  bool random_start = false;
  int restarts = 1;
  std::uint64_t seed = 0;

  static AttackConfig clean();
  static AttackConfig fgsm(double eps = 8.0 / 255.0);
  /// PGD-k with step 2/255, random start and one restart.
  static AttackConfig pgd(int steps, double eps = 8.0 / 255.0);
  void validate() const;
};

/// Untargeted l_inf attack on hard-label cross-entropy. With restarts > 1
/// each example keeps the first restart that flips its prediction, or the
/// highest-loss one if none does.
Tensor attack(const Network& net, const Tensor& x, const std::vector<int>& labels, const AttackConfig& cfg);

struct AttackResult {
  std::string name;
  std::size_t n = 0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Accuracy and mean cross-entropy under each attack; deterministic given seeds.
std::vector<AttackResult> evaluate(const Network& net, const Dataset& data, const std::vector<AttackConfig>& attacks,
                                   std::size_t batch_size = 256, std::size_t max_examples = 0);

double accuracy(const Network& net, const Tensor& x, const std::vector<int>& labels);

}  // namespace afm::attack
