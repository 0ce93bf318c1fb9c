// SPDX-License-Identifier: Apache-2.0
#include "afm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "afm/error.hpp"
#include "afm/ops.hpp"
#include "afm/rng.hpp"
#include "afm/trainer.hpp"

namespace afm::oracle {

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  NoGradGuard no_grad;
  Tensor probe = x.detach();
  std::vector<double> g(x.numel());
  auto v = probe.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double up = f(probe);
    v[i] = orig - h;
    const double down = f(probe);
    v[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

double relative_error(std::span<const double> analytic, std::span<const double> reference) {
  if (analytic.size() != reference.size()) throw DimensionError("relative_error: size mismatch");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - reference[i]));
    scale = std::max(scale, std::abs(reference[i]));
  }
  return diff / std::max(1e-12, scale);
}

namespace {

double check_once(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs,
                  double h) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(t.detach().set_requires_grad(true));
  Tape tape;
  {
    Tape::Scope scope(tape);
    const Tensor out = f(leaves);
    tape.backward(out);
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto eval = [&](const Tensor& xk) {
      std::vector<Tensor> args;
      for (std::size_t j = 0; j < inputs.size(); ++j) args.push_back(j == k ? xk : inputs[j]);
      return f(args).item();
    };
    const Tensor fd = fd_gradient(eval, inputs[k], h);
    worst = std::max(worst, relative_error(leaves[k].grad(), fd.data()));
  }
  return worst;
}

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Keeps entries away from the relu kink so central differences stay valid.
Tensor off_kink(Shape shape, std::mt19937_64& rng) {
  Tensor t = uniform(std::move(shape), -1.0, 1.0, rng);
  for (auto& x : t.mutable_data()) {
    if (std::abs(x) < 0.05) x = x < 0 ? x - 0.05 : x + 0.05;
  }
  return t;
}

// Reduces any tensor to a scalar with fixed random weights so every output
// coordinate contributes to the checked gradient.
Tensor contract(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ops::sum(ops::mul(y, uniform(y.shape(), -1.0, 1.0, rng)));
}

std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> out(n);
  for (auto& y : out) y = d(rng);
  return out;
}

using Builder = std::function<std::pair<std::function<Tensor(const std::vector<Tensor>&)>, std::vector<Tensor>>(
    std::mt19937_64&, std::uint64_t)>;

struct Case {
  std::string name;
  Builder build;
};

std::vector<Case> suite_cases() {
  using V = std::vector<Tensor>;
  std::vector<Case> cs;
  cs.push_back({"matmul", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::matmul(a[0], a[1]), s); }),
                                   V{uniform({3, 4}, -1, 1, rng), uniform({4, 5}, -1, 1, rng)}};
                }});
  cs.push_back({"linear", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::linear(a[0], a[1], a[2]), s); }),
                                   V{uniform({4, 6}, -1, 1, rng), uniform({3, 6}, -1, 1, rng),
                                     uniform({3}, -1, 1, rng)}};
                }});
  cs.push_back({"add_bias", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::add_bias(a[0], a[1]), s); }),
                                   V{uniform({4, 3}, -1, 1, rng), uniform({3}, -1, 1, rng)}};
                }});
  cs.push_back({"conv2d", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::conv2d(a[0], a[1], 1, 1), s); }),
                                   V{uniform({2, 2, 5, 5}, -1, 1, rng), uniform({3, 2, 3, 3}, -1, 1, rng)}};
                }});
  cs.push_back({"conv2d_stride2", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::conv2d(a[0], a[1], 2, 0), s); }),
                                   V{uniform({2, 2, 6, 6}, -1, 1, rng), uniform({2, 2, 2, 2}, -1, 1, rng)}};
                }});
  cs.push_back({"add_channel_bias", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::add_channel_bias(a[0], a[1]), s); }),
                                   V{uniform({2, 3, 2, 2}, -1, 1, rng), uniform({3}, -1, 1, rng)}};
                }});
  cs.push_back({"avgpool2d", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::avgpool2d(a[0], 2), s); }),
                                   V{uniform({2, 2, 4, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"relu", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::relu(a[0]), s); }),
                      V{off_kink({4, 5}, rng)}};
                }});
  cs.push_back({"reshape", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::reshape(a[0], {6, 2}), s); }),
                                   V{uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"flatten", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::flatten(a[0]), s); }),
                      V{uniform({2, 3, 2, 2}, -1, 1, rng)}};
                }});
  cs.push_back({"add", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::add(a[0], a[1]), s); }),
                      V{uniform({3, 4}, -1, 1, rng), uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"sub", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::sub(a[0], a[1]), s); }),
                      V{uniform({3, 4}, -1, 1, rng), uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"mul", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::mul(a[0], a[1]), s); }),
                      V{uniform({3, 4}, -1, 1, rng), uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"scale", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::scale(a[0], -1.7), s); }),
                      V{uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"sum", [](auto& rng, std::uint64_t) {
                  return std::pair{std::function<Tensor(const V&)>([](const V& a) { return ops::sum(a[0]); }),
                                   V{uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"mean", [](auto& rng, std::uint64_t) {
                  return std::pair{std::function<Tensor(const V&)>([](const V& a) { return ops::mean(a[0]); }),
                                   V{uniform({3, 4}, -1, 1, rng)}};
                }});
  cs.push_back({"softmax", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::softmax(a[0], 1), s); }),
                      V{uniform({3, 5}, -3, 3, rng)}};
                }});
  cs.push_back({"softmax_axis0", [](auto& rng, std::uint64_t s) {
                  return std::pair{
                      std::function<Tensor(const V&)>([s](const V& a) { return contract(ops::softmax(a[0], 0), s); }),
                      V{uniform({4, 3}, -3, 3, rng)}};
                }});
  cs.push_back({"log_softmax", [](auto& rng, std::uint64_t s) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [s](const V& a) { return contract(ops::log_softmax(a[0], 1), s); }),
                                   V{uniform({3, 5}, -3, 3, rng)}};
                }});
  cs.push_back({"kl_divergence", [](auto& rng, std::uint64_t) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [](const V& a) { return ops::kl_divergence(a[0], a[1], 1.0); }),
                                   V{uniform({4, 5}, -3, 3, rng), uniform({4, 5}, -3, 3, rng)}};
                }});
  cs.push_back({"kl_divergence_t4", [](auto& rng, std::uint64_t) {
                  return std::pair{std::function<Tensor(const V&)>(
                                       [](const V& a) { return ops::kl_divergence(a[0], a[1], 4.0); }),
                                   V{uniform({4, 5}, -3, 3, rng), uniform({4, 5}, -3, 3, rng)}};
                }});
  cs.push_back({"cross_entropy", [](auto& rng, std::uint64_t) {
                  auto labels = random_labels(4, 5, rng);
                  return std::pair{std::function<Tensor(const V&)>(
                                       [labels](const V& a) { return ops::cross_entropy(a[0], labels); }),
                                   V{uniform({4, 5}, -3, 3, rng)}};
                }});
  cs.push_back({"soft_cross_entropy", [](auto& rng, std::uint64_t) {
                  const Tensor targets = ops::softmax(uniform({4, 5}, -2, 2, rng), 1);
                  return std::pair{std::function<Tensor(const V&)>(
                                       [targets](const V& a) { return ops::soft_cross_entropy(a[0], targets); }),
                                   V{uniform({4, 5}, -3, 3, rng)}};
                }});
  // Distillation loss w.r.t. both student logit tensors; teacher logits
  // enter as constants.
  cs.push_back({"loss_advfunmatch", [](auto& rng, std::uint64_t) {
                  const Tensor tc = uniform({4, 3}, -2, 2, rng);
                  const Tensor tw = uniform({4, 3}, -2, 2, rng);
                  const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                  return std::pair{std::function<Tensor(const V&)>([=](const V& a) {
                                     return train::loss_advfunmatch_logits(tc, a[0], tw, a[1], lambda, 1.0);
                                   }),
                                   V{uniform({4, 3}, -2, 2, rng), uniform({4, 3}, -2, 2, rng)}};
                }});
  // Same loss end to end through a student network, w.r.t. its parameters.
  cs.push_back({"loss_advfunmatch_params", [](auto& rng, std::uint64_t s) {
                  const Network teacher = build_network("mlp:6", {4}, 3, mix_seed(s, 1));
                  const Network student = build_network("mlp:5", {4}, 3, mix_seed(s, 2));
                  const Tensor x = uniform({3, 4}, 0, 1, rng);
                  const Tensor xt = uniform({3, 4}, 0, 1, rng);
                  return std::pair{std::function<Tensor(const V&)>([=](const V& a) {
                                     Network net = student.clone();
                                     for (std::size_t i = 0; i < a.size(); ++i) net.params()[i] = a[i];
                                     return train::loss_advfunmatch(teacher, net, x, xt, 0.9, 1.0);
                                   }),
                                   student.params()};
                }});
  cs.push_back({"loss_pgd_at_ls", [](auto& rng, std::uint64_t s) {
                  const Network student = build_network("mlp:5", {4}, 3, mix_seed(s, 3));
                  const Tensor xt = uniform({3, 4}, 0, 1, rng);
                  const auto labels = random_labels(3, 3, rng);
                  return std::pair{std::function<Tensor(const V&)>([=](const V& a) {
                                     Network net = student.clone();
                                     for (std::size_t i = 0; i < a.size(); ++i) net.params()[i] = a[i];
                                     return train::loss_baselines(train::Method::kPgdAtLs, net, xt, labels, 0.5);
                                   }),
                                   student.params()};
                }});
  // Inner objective w.r.t. x~, gradient flowing through both networks.
  cs.push_back({"mismatched_objective", [](auto& rng, std::uint64_t s) {
                  const Network teacher = build_network("mlp:6", {5}, 3, mix_seed(s, 4));
                  const Network student = build_network("mlp:6", {5}, 3, mix_seed(s, 5));
                  return std::pair{std::function<Tensor(const V&)>([=](const V& a) {
                                     return worst_case::objective(worst_case::Variant::kMismatched, &teacher, student,
                                                                  a[0], nullptr, nullptr, 1.0);
                                   }),
                                   V{uniform({3, 5}, 0, 1, rng)}};
                }});
  cs.push_back({"mismatched_objective_cnn", [](auto& rng, std::uint64_t s) {
                  const Network teacher = build_network("cnn-tiny", {1, 4, 4}, 3, mix_seed(s, 6));
                  const Network student = build_network("cnn-tiny", {1, 4, 4}, 3, mix_seed(s, 7));
                  return std::pair{std::function<Tensor(const V&)>([=](const V& a) {
                                     return worst_case::objective(worst_case::Variant::kMismatched, &teacher, student,
                                                                  a[0], nullptr, nullptr, 1.0);
                                   }),
                                   V{uniform({2, 1, 4, 4}, 0, 1, rng)}};
                }});
  return cs;
}

}  // namespace

GradCheckReport grad_check(const std::string& op, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           const std::vector<Tensor>& inputs, double h, double threshold) {
  GradCheckReport r;
  r.op = op;
  r.threshold = threshold;
  r.probes = 1;
  r.max_rel_error = check_once(f, inputs, h);
  return r;
}

std::vector<GradCheckReport> grad_check_suite(int probes, std::uint64_t seed, double threshold) {
  if (probes < 1) throw ConfigError("gradcheck: probes must be >= 1");
  std::vector<GradCheckReport> out;
  const auto cases = suite_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradCheckReport r;
    r.op = cases[c].name;
    r.threshold = threshold;
    std::mt19937_64 rng(mix_seed(seed, c));
    for (int p = 0; p < probes; ++p) {
      const std::uint64_t s = mix_seed(seed, c * 1000003ULL + static_cast<std::uint64_t>(p));
      auto [f, inputs] = cases[c].build(rng, s);
      const double err = check_once(f, inputs, 1e-5);
      r.max_rel_error = std::max(r.max_rel_error, err);
      ++r.probes;
    }
    out.push_back(r);
  }
  return out;
}

std::string spec_label(const worst_case::Spec& spec) {
  return worst_case::to_string(spec.variant) + "(" + std::to_string(spec.steps) + ")";
}

std::vector<std::pair<std::string, double>> variant_kl_means(const Network& teacher, const Network& student,
                                                             const std::vector<worst_case::Spec>& specs,
                                                             const Tensor& x, const std::vector<int>& labels) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& spec : specs) {
    auto s = spec;
    s.report_final = true;
    const auto res = worst_case::generate(s, &teacher, student, x, &labels);
    double m = 0.0;
    for (double v : res.kl) m += v;
    out.emplace_back(spec_label(spec), res.kl.empty() ? 0.0 : m / static_cast<double>(res.kl.size()));
  }
  return out;
}

CertifyReport certify_inner_max(const Network& teacher, const Network& student, const worst_case::Spec& spec,
                                const Tensor& inputs, int n_trials, double threshold, int n_random,
                                std::uint64_t seed) {
  if (inputs.rank() != 2) throw DimensionError("certify: expected inputs [N,d], got " + shape_str(inputs.shape()));
  const std::size_t d = inputs.dim(1);
  if (d > 12) throw ConfigError("certify: input dimension " + std::to_string(d) + " exceeds 12");
  if (inputs.dim(0) == 0 || n_trials < 1) throw ConfigError("certify: need at least one input and one trial");
  if (spec.variant != worst_case::Variant::kMismatched && spec.variant != worst_case::Variant::kMismatchedNoTg) {
    throw ConfigError("certify: the oracle maximizes KL(T||S); use a mismatched variant");
  }

  CertifyReport rep;
  rep.trials = n_trials;
  rep.threshold = threshold;
  std::mt19937_64 rng(mix_seed(seed, 11));
  for (int t = 0; t < n_trials; ++t) {
    const std::size_t i = static_cast<std::size_t>(t) % inputs.dim(0);
    std::vector<double> row(inputs.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                            inputs.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    const Tensor x({1, d}, row);
    worst_case::Spec s = spec;
    s.seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(t));
    s.report_final = true;
    std::vector<double> eps = worst_case::sample_eps(s, 1, rng);
    const auto res = worst_case::generate(s, &teacher, student, x, nullptr, &eps);
    const auto orc = worst_case::ball_oracle(teacher, student, x, eps[0], n_random, s.seed, s.temperature);
    const double pgd = res.kl[0];
    const double ratio = orc.best <= 0.0 ? 1.0 : pgd / orc.best;
    rep.ratios.push_back(ratio);
    if (pgd >= threshold * orc.best) ++rep.hits;
    rep.mean_pgd += pgd;
    rep.mean_oracle += orc.best;
    rep.max_oracle = std::max(rep.max_oracle, orc.best);
    rep.max_pgd = std::max(rep.max_pgd, pgd);
  }
  rep.fraction = static_cast<double>(rep.hits) / n_trials;
  rep.mean_pgd /= n_trials;
  rep.mean_oracle /= n_trials;

  std::vector<worst_case::Spec> specs;
  for (auto [v, k] : {std::pair{worst_case::Variant::kMismatched, 10}, {worst_case::Variant::kMismatched, 2},
                      {worst_case::Variant::kMismatchedNoTg, 10}, {worst_case::Variant::kAdversarialRsl, 10},
                      {worst_case::Variant::kAdversarial, 10}}) {
    auto s = worst_case::Spec::defaults(v, k);
    s.eps_train = spec.eps_train;
    s.eps_add = 0.0;
    s.seed = mix_seed(seed, 77);
    specs.push_back(s);
  }
  const std::vector<int> labels = ops::argmax_rows(teacher.forward(inputs));
  rep.variant_means = variant_kl_means(teacher, student, specs, inputs, labels);
  return rep;
}

}  // namespace afm::oracle
