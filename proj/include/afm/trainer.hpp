// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "afm/attack.hpp"
#include "afm/augment.hpp"
#include "afm/data.hpp"
#include "afm/nn.hpp"
#include "afm/worst_case.hpp"

namespace afm::train {

enum class Method { kFunMatch, kAdvFunMatch, kPgdAt, kPgdAtLs };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct OptimizerConfig {
  double lr0 = 0.4;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 2e-4;
};

struct ScheduleConfig {
  int warmup_epochs = 5;
  int total_epochs = 60;
  std::size_t batch_size = 128;
};

struct TrainConfig {
  Method method = Method::kAdvFunMatch;
  double lambda = 0.9;
  double temperature = 1.0;
  double ls_alpha = 0.5;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  worst_case::Spec worst_case = [] {
    auto s = worst_case::Spec::defaults(worst_case::Variant::kMismatched, 2);
    s.eps_add = 6.0 / 255.0;
    return s;
  }();
  augment::AugPolicy augmentation;
  std::uint64_t seed = 0;

  /// Attacks run on the evaluation set after every `eval_every` epochs
  /// (and always after the last one).
  std::vector<attack::AttackConfig> eval_attacks{attack::AttackConfig::fgsm(), attack::AttackConfig::pgd(20)};
  std::size_t eval_examples = 0;  // 0 = whole evaluation set
  int eval_every = 1;

  void validate() const;
};

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double clean_acc = 0.0;
  std::vector<std::pair<std::string, double>> robust_acc;  // per attack name
  double mean_kl_clean = 0.0;
  double mean_kl_worst = 0.0;
  double lr = 0.0;
  double wallclock_ms = 0.0;
  long fb_t_count = 0;
  long fb_s_count = 0;
  bool evaluated = false;

  /// Accuracy for a named attack, NaN when absent.
  double robust(const std::string& name) const;
};

struct Failure {
  int epoch = 0;  // 1-based, as in MetricsRecord
  std::size_t batch = 0;
  double lr = 0.0;
  std::string message;
};

struct TrainResult {
  Network student;
  std::vector<MetricsRecord> history;
  std::optional<Failure> failure;
};

/// (1 - lambda) KL(T(x) || S(x)) + lambda KL(T(x~) || S(x~)). Teacher
/// outputs are constants; gradients reach the student parameters only.
Tensor loss_advfunmatch(const Network& teacher, const Network& student, const Tensor& x, const Tensor& x_tilde,
                        double lambda, double temperature);

/// Same combination from precomputed logits (teacher logits are detached).
Tensor loss_advfunmatch_logits(const Tensor& t_clean, const Tensor& s_clean, const Tensor& t_worst,
                               const Tensor& s_worst, double lambda, double temperature);

/// Smoothed targets: 1 - alpha on the label, alpha / (K - 1) elsewhere.
Tensor smoothed_targets(const std::vector<int>& labels, std::size_t num_classes, double alpha);

/// Hard-label baselines on x~: plain cross-entropy (kPgdAt) or
/// cross-entropy against smoothed targets (kPgdAtLs).
Tensor loss_baselines(Method method, const Network& student, const Tensor& x_tilde, const std::vector<int>& labels,
                      double ls_alpha);

/// Linear warmup from 0 to lr0, then half-cosine decay to 0 at the end of
/// the run. `step` counts optimizer steps from 0.
double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t steps_per_epoch);

/// Momentum buffers, one per parameter tensor.
struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// SGD with (Nesterov) momentum; weight decay is added to the gradient
/// before the momentum update.
void sgd_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, double lr,
              const OptimizerConfig& cfg, SgdState& state);

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// Runs the outer minimization. The student is cloned; teacher is read-only
/// and may be null for kPgdAt/kPgdAtLs. Stops early with a Failure record
/// when the loss turns non-finite.
TrainResult train(const Network* teacher, const Network& student, const Dataset& train_set, const Dataset& eval_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

}  // namespace afm::train
