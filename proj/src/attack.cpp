// SPDX-License-Identifier: Apache-2.0
#include "afm/attack.hpp"

#include <algorithm>
#include <numeric>

#include "afm/error.hpp"
#include "afm/ops.hpp"
#include "afm/worst_case.hpp"

namespace afm::attack {

AttackConfig AttackConfig::clean() { return AttackConfig{}; }

AttackConfig AttackConfig::fgsm(double eps) {
  AttackConfig c;
  c.name = "fgsm";
  c.kind = Kind::kFgsm;
  c.eps_test = eps;
  c.steps = 1;
  c.step_size = eps;
  c.random_start = false;
  return c;
}

AttackConfig AttackConfig::pgd(int steps, double eps) {
  AttackConfig c;
  c.name = "pgd" + std::to_string(steps);
  c.kind = Kind::kPgd;
  c.eps_test = eps;
  c.steps = steps;
  c.step_size = 2.0 / 255.0;
  c.random_start = true;
  return c;
}

void AttackConfig::validate() const {
  if (kind == Kind::kClean) return;
  if (!(eps_test >= 0.0)) throw ConfigError("attack '" + name + "': eps_test must be >= 0");
  if (restarts < 1) throw ConfigError("attack '" + name + "': restarts must be >= 1");
  if (steps < 1) throw ConfigError("attack '" + name + "': steps must be >= 1");
  if (kind == Kind::kFgsm && (steps != 1 || step_size != eps_test || random_start)) {
    throw ConfigError("attack '" + name + "': fgsm means one step of size eps_test without random start");
  }
}

Tensor attack(const Network& net, const Tensor& x, const std::vector<int>& labels, const AttackConfig& cfg) {
  cfg.validate();
  if (cfg.kind == Kind::kClean || cfg.eps_test == 0.0) return x.detach();

  const std::size_t n = x.dim(0);
  const std::size_t per_example = n == 0 ? 0 : x.numel() / n;
  worst_case::Spec spec;
  spec.variant = worst_case::Variant::kAdversarial;
  spec.steps = cfg.steps;
  spec.step_size = cfg.step_size;
  spec.eps_train = cfg.eps_test;
  spec.eps_add = 0.0;
  spec.random_start = cfg.random_start;
  spec.report_final = cfg.restarts > 1;
  const std::vector<double> eps(n, cfg.eps_test);

  std::vector<double> best(x.data().begin(), x.data().end());
  std::vector<double> best_loss(n, -1.0);
  std::vector<bool> fooled(n, false);
  for (int r = 0; r < cfg.restarts; ++r) {
    spec.seed = cfg.seed + static_cast<std::uint64_t>(r) * 0x9E3779B97F4A7C15ULL;
    auto res = worst_case::generate(spec, nullptr, net, x, &labels, &eps);
    if (cfg.restarts == 1) return res.x_tilde;
    const auto pred = ops::argmax_rows(net.forward(res.x_tilde));
    const auto xt = res.x_tilde.data();
    for (std::size_t i = 0; i < n; ++i) {
      if (fooled[i]) continue;
      const bool flips = pred[i] != labels[i];
      if (flips || res.objective[i] > best_loss[i]) {
        std::copy_n(xt.begin() + static_cast<std::ptrdiff_t>(i * per_example), per_example,
                    best.begin() + static_cast<std::ptrdiff_t>(i * per_example));
        best_loss[i] = res.objective[i];
        fooled[i] = flips;
      }
    }
  }
  return Tensor(x.shape(), std::move(best));
}

double accuracy(const Network& net, const Tensor& x, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const auto pred = ops::argmax_rows(net.forward(x));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<AttackResult> evaluate(const Network& net, const Dataset& data, const std::vector<AttackConfig>& attacks,
                                   std::size_t batch_size, std::size_t max_examples) {
  const std::size_t n = max_examples == 0 ? data.size() : std::min(max_examples, data.size());
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
  std::vector<AttackResult> out;
  for (const auto& cfg : attacks) {
    AttackResult r;
    r.name = cfg.name;
    r.n = n;
    std::size_t hit = 0;
    double loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      std::vector<std::size_t> idx(std::min(batch_size, n - start));
      std::iota(idx.begin(), idx.end(), start);
      const Tensor xb = data.gather(idx);
      const auto yb = data.gather_labels(idx);
      AttackConfig batch_cfg = cfg;
      batch_cfg.seed = cfg.seed + start;
      const Tensor xa = attack(net, xb, yb, batch_cfg);
      const Tensor logits = net.forward(xa);
      const auto pred = ops::argmax_rows(logits);
      const auto ce = ops::cross_entropy_rows(logits, yb);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        hit += pred[i] == yb[i];
        loss += ce[i];
      }
    }
    r.accuracy = n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
    r.mean_loss = n == 0 ? 0.0 : loss / static_cast<double>(n);
    out.push_back(r);
  }
  return out;
}

}  // namespace afm::attack
