// SPDX-License-Identifier: Apache-2.0
#include "afm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "afm/error.hpp"
#include "afm/ops.hpp"
#include "afm/rng.hpp"

namespace afm::train {
namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugStream = 2;
constexpr std::uint64_t kWorstCaseStream = 3;
constexpr std::uint64_t kEvalStream = 4;

bool uses_teacher(Method m) { return m == Method::kFunMatch || m == Method::kAdvFunMatch; }

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kFunMatch: return "funmatch";
    case Method::kAdvFunMatch: return "advfunmatch";
    case Method::kPgdAt: return "pgd_at";
    case Method::kPgdAtLs: return "pgd_at_ls";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::kFunMatch, Method::kAdvFunMatch, Method::kPgdAt, Method::kPgdAtLs}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown training method '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(ls_alpha >= 0.0 && ls_alpha < 1.0)) throw ConfigError("ls_alpha must be in [0,1)");
  if (schedule.total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (schedule.warmup_epochs < 0 || schedule.warmup_epochs >= schedule.total_epochs) {
    throw ConfigError("warmup_epochs must be in [0, total_epochs)");
  }
  if (schedule.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(optimizer.lr0 > 0.0) || optimizer.momentum < 0.0 || optimizer.momentum >= 1.0 || optimizer.weight_decay < 0.0) {
    throw ConfigError("optimizer: need lr0 > 0, momentum in [0,1), weight_decay >= 0");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  worst_case.validate();
  if ((method == Method::kPgdAt || method == Method::kPgdAtLs) &&
      worst_case.variant != worst_case::Variant::kAdversarial) {
    throw ConfigError(to_string(method) + " trains on hard-label adversarial examples; worst_case variant must be adversarial");
  }
  for (const auto& a : eval_attacks) a.validate();
}

double MetricsRecord::robust(const std::string& name) const {
  for (const auto& [n, acc] : robust_acc)
    if (n == name) return acc;
  return std::numeric_limits<double>::quiet_NaN();
}

Tensor loss_advfunmatch_logits(const Tensor& t_clean, const Tensor& s_clean, const Tensor& t_worst,
                               const Tensor& s_worst, double lambda, double temperature) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0,1], got " + std::to_string(lambda));
  const Tensor clean = ops::kl_divergence(t_clean.detach(), s_clean, temperature);
  const Tensor worst = ops::kl_divergence(t_worst.detach(), s_worst, temperature);
  return ops::add(ops::scale(clean, 1.0 - lambda), ops::scale(worst, lambda));
}

Tensor loss_advfunmatch(const Network& teacher, const Network& student, const Tensor& x, const Tensor& x_tilde,
                        double lambda, double temperature) {
  if (x.shape() != x_tilde.shape()) {
    throw DimensionError("loss_advfunmatch: x " + shape_str(x.shape()) + " vs x_tilde " + shape_str(x_tilde.shape()));
  }
  return loss_advfunmatch_logits(teacher.forward(x), student.forward(x, GradMode::kFull), teacher.forward(x_tilde),
                                 student.forward(x_tilde, GradMode::kFull), lambda, temperature);
}

Tensor smoothed_targets(const std::vector<int>& labels, std::size_t num_classes, double alpha) {
  if (num_classes < 2) throw ConfigError("smoothed_targets: need at least two classes");
  const double off = alpha / static_cast<double>(num_classes - 1);
  std::vector<double> t(labels.size() * num_classes, off);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw IndexError("smoothed_targets: label " + std::to_string(labels[i]) + " out of range");
    }
    t[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0 - alpha;
  }
  return Tensor({labels.size(), num_classes}, std::move(t));
}

Tensor loss_baselines(Method method, const Network& student, const Tensor& x_tilde, const std::vector<int>& labels,
                      double ls_alpha) {
  const Tensor logits = student.forward(x_tilde, GradMode::kFull);
  switch (method) {
    case Method::kPgdAt:
      return ops::cross_entropy(logits, labels);
    case Method::kPgdAtLs:
      if (!(ls_alpha >= 0.0 && ls_alpha < 1.0)) throw ConfigError("ls_alpha must be in [0,1)");
      return ops::soft_cross_entropy(logits, smoothed_targets(labels, logits.dim(1), ls_alpha));
    default:
      throw ConfigError("loss_baselines: " + to_string(method) + " is not a hard-label baseline");
  }
}

double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t steps_per_epoch) {
  const double lr0 = cfg.optimizer.lr0;
  const auto warmup = static_cast<double>(cfg.schedule.warmup_epochs) * static_cast<double>(steps_per_epoch);
  const auto total = static_cast<double>(cfg.schedule.total_epochs) * static_cast<double>(steps_per_epoch);
  const auto s = static_cast<double>(step);
  if (s < warmup) return lr0 * s / warmup;
  const double progress = std::min(1.0, (s - warmup) / std::max(1.0, total - warmup));
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads, double lr,
              const OptimizerConfig& cfg, SgdState& state) {
  if (grads.size() != params.size()) throw DimensionError("sgd_step: gradient count does not match parameters");
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto theta = params[k].mutable_data();
    const auto& g = grads[k];
    auto& v = state.velocity[k];
    if (g.size() != theta.size()) throw DimensionError("sgd_step: gradient size mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = g[i] + cfg.weight_decay * theta[i];
      v[i] = cfg.momentum * v[i] + d;
      theta[i] -= lr * (cfg.nesterov ? d + cfg.momentum * v[i] : v[i]);
    }
  }
}

TrainResult train(const Network* teacher, const Network& student_init, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (uses_teacher(cfg.method) && teacher == nullptr) throw ConfigError(to_string(cfg.method) + " needs a teacher");
  if (cfg.method == Method::kAdvFunMatch && cfg.worst_case.variant != worst_case::Variant::kAdversarial &&
      teacher == nullptr) {
    throw ConfigError("worst-case variant needs a teacher");
  }
  if (train_set.size() == 0) throw ConfigError("empty training set");
  cfg.augmentation.validate(train_set.example_dims());

  TrainResult result;
  result.student = student_init.clone();
  Network& student = result.student;

  const std::size_t n = train_set.size();
  const std::size_t bs = cfg.schedule.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, kShuffleStream));
  std::mt19937_64 aug_rng(mix_seed(mix_seed(cfg.seed, kAugStream), cfg.augmentation.stream));
  SgdState opt_state;
  std::vector<std::size_t> order(n);
  std::size_t global_step = 0;
  long fb_t = 0, fb_s = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<double> losses, kl_clean, kl_worst;
    double lr = 0.0;

    for (std::size_t b = 0; b < steps_per_epoch; ++b, ++global_step) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * bs)));
      const auto labels = train_set.gather_labels(idx);
      // One augmented view per example, seen by both networks.
      const Tensor x = augment::apply(cfg.augmentation, train_set.gather(idx), aug_rng);
      lr = lr_at(global_step, cfg, steps_per_epoch);

      std::optional<Tensor> x_tilde;
      if (cfg.method != Method::kFunMatch) {
        auto spec = cfg.worst_case;
        spec.seed = mix_seed(mix_seed(cfg.seed, kWorstCaseStream), global_step);
        spec.temperature = cfg.temperature;
        spec.report_final = false;
        auto gen = worst_case::generate(spec, teacher, student, x, &labels);
        fb_t += gen.queries.teacher_fb;
        fb_s += gen.queries.student_fb;
        x_tilde = std::move(gen.x_tilde);
      }

      student.zero_grad();
      Tape tape;
      Tensor loss;
      {
        Tape::Scope scope(tape);
        switch (cfg.method) {
          case Method::kFunMatch:
          case Method::kAdvFunMatch: {
            const Tensor t_clean = teacher->forward(x);
            const Tensor s_clean = student.forward(x, GradMode::kFull);
            const Tensor t_worst = cfg.method == Method::kFunMatch ? t_clean : teacher->forward(*x_tilde);
            const Tensor s_worst =
                cfg.method == Method::kFunMatch ? s_clean : student.forward(*x_tilde, GradMode::kFull);
            const double lam = cfg.method == Method::kFunMatch ? 0.0 : cfg.lambda;
            kl_clean.push_back(mean_of(ops::kl_rows(t_clean, s_clean, cfg.temperature)));
            if (cfg.method == Method::kAdvFunMatch) {
              kl_worst.push_back(mean_of(ops::kl_rows(t_worst, s_worst, cfg.temperature)));
            }
            loss = loss_advfunmatch_logits(t_clean, s_clean, t_worst, s_worst, lam, cfg.temperature);
            break;
          }
          case Method::kPgdAt:
          case Method::kPgdAtLs:
            loss = loss_baselines(cfg.method, student, *x_tilde, labels, cfg.ls_alpha);
            break;
        }
      }
      if (!std::isfinite(loss.item())) {
        result.failure = Failure{epoch + 1, b, lr, "non-finite loss " + std::to_string(loss.item())};
        return result;
      }
      losses.push_back(loss.item());
      tape.backward(loss);
      std::vector<std::vector<double>> grads;
      grads.reserve(student.params().size());
      for (const auto& p : student.params()) grads.push_back(p.grad());
      sgd_step(student.params(), grads, lr, cfg.optimizer, opt_state);
    }

    MetricsRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = mean_of(losses);
    rec.mean_kl_clean = mean_of(kl_clean);
    rec.mean_kl_worst = mean_of(kl_worst);
    rec.lr = lr;
    rec.fb_t_count = fb_t;
    rec.fb_s_count = fb_s;
    const bool last = epoch + 1 == cfg.schedule.total_epochs;
    if (last || (epoch + 1) % cfg.eval_every == 0) {
      std::vector<attack::AttackConfig> attacks{attack::AttackConfig::clean()};
      for (auto a : cfg.eval_attacks) {
        a.seed = mix_seed(mix_seed(cfg.seed, kEvalStream), a.seed);
        attacks.push_back(a);
      }
      const auto table = attack::evaluate(student, eval_set, attacks, 256, cfg.eval_examples);
      rec.clean_acc = table[0].accuracy;
      for (std::size_t i = 1; i < table.size(); ++i) rec.robust_acc.emplace_back(table[i].name, table[i].accuracy);
      rec.evaluated = true;
    } else {
      rec.clean_acc = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace afm::train
