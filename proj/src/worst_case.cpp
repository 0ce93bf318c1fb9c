// SPDX-License-Identifier: Apache-2.0
#include "afm/worst_case.hpp"

#include <algorithm>
#include <cmath>

#include "afm/error.hpp"
#include "afm/ops.hpp"

namespace afm::worst_case {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kAdversarial: return "adversarial";
    case Variant::kAdversarialRsl: return "adversarial_rsl";
    case Variant::kMismatched: return "mismatched";
    case Variant::kMismatchedNoTg: return "mismatched_no_tg";
  }
  return "?";
}

Variant variant_from_string(const std::string& name) {
  for (Variant v : {Variant::kAdversarial, Variant::kAdversarialRsl, Variant::kMismatched, Variant::kMismatchedNoTg}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown worst-case variant '" + name + "'");
}

Spec Spec::defaults(Variant variant, int steps) {
  Spec s;
  s.variant = variant;
  s.steps = steps;
  const bool mismatched = variant == Variant::kMismatched || variant == Variant::kMismatchedNoTg;
  s.step_size = (mismatched && steps == 2) ? 8.0 / 255.0 : 2.0 / 255.0;
  s.random_start = !mismatched;
  return s;
}

void Spec::validate() const {
  if (steps < 1) throw ConfigError("worst-case steps must be >= 1");
  if (!(step_size > 0.0 && step_size <= 1.0)) throw ConfigError("worst-case step size must be in (0,1]");
  if (!(eps_train > 0.0)) throw ConfigError("eps_train must be > 0");
  if (!(eps_add >= 0.0)) throw ConfigError("eps_add must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
}

GradQueries& GradQueries::operator+=(const GradQueries& o) {
  teacher_fb += o.teacher_fb;
  student_fb += o.student_fb;
  teacher_forward += o.teacher_forward;
  student_forward += o.student_forward;
  return *this;
}

std::vector<double> sample_eps(const Spec& spec, std::size_t n, std::mt19937_64& rng) {
  std::vector<double> eps(n, spec.eps_train);
  if (spec.eps_add > 0.0) {
    std::uniform_real_distribution<double> extra(0.0, spec.eps_add);
    for (auto& e : eps) e += extra(rng);
  }
  return eps;
}

Tensor objective(Variant variant, const Network* teacher, const Network& student, const Tensor& x_tilde,
                 const std::vector<int>* labels, const Tensor* rsl_logits, double temperature) {
  switch (variant) {
    case Variant::kAdversarial:
      if (labels == nullptr) throw ConfigError("adversarial objective needs labels");
      return ops::cross_entropy(student.forward(x_tilde, GradMode::kInputOnly), *labels);
    case Variant::kAdversarialRsl:
      if (rsl_logits == nullptr) throw ConfigError("adversarial_rsl objective needs robust soft labels");
      return ops::kl_divergence(rsl_logits->detach(), student.forward(x_tilde, GradMode::kInputOnly), temperature);
    case Variant::kMismatched:
      if (teacher == nullptr) throw ConfigError("mismatched objective needs a teacher");
      return ops::kl_divergence(teacher->forward(x_tilde, GradMode::kInputOnly),
                                student.forward(x_tilde, GradMode::kInputOnly), temperature);
    case Variant::kMismatchedNoTg:
      if (teacher == nullptr) throw ConfigError("mismatched objective needs a teacher");
      return ops::kl_divergence(teacher->forward(x_tilde, GradMode::kNone),
                                student.forward(x_tilde, GradMode::kInputOnly), temperature);
  }
  throw ConfigError("unhandled variant");
}

void project(std::span<double> x_tilde, std::span<const double> x, const std::vector<double>& eps,
             std::size_t per_example) {
  for (std::size_t i = 0; i < x_tilde.size(); ++i) {
    const double e = eps[i / per_example];
    const double v = std::clamp(x_tilde[i], x[i] - e, x[i] + e);
    x_tilde[i] = std::clamp(v, 0.0, 1.0);
  }
}

Result generate(const Spec& spec, const Network* teacher, const Network& student, const Tensor& x,
                const std::vector<int>* labels, const std::vector<double>* eps_override) {
  spec.validate();
  const Variant v = spec.variant;
  if (v != Variant::kAdversarial && teacher == nullptr) {
    throw ConfigError("variant " + to_string(v) + " needs a teacher");
  }
  if (v == Variant::kAdversarial && labels == nullptr) throw ConfigError("adversarial variant needs labels");
  if (x.rank() < 2) throw DimensionError("generate: expected a batch, got " + shape_str(x.shape()));

  const std::size_t n = x.dim(0);
  const std::size_t per_example = n == 0 ? 0 : x.numel() / n;
  std::mt19937_64 rng(spec.seed);

  Result res;
  if (eps_override) {
    if (eps_override->size() != n) throw DimensionError("eps override size does not match batch");
    res.eps_used = *eps_override;
  } else {
    res.eps_used = sample_eps(spec, n, rng);
  }

  std::vector<double> xt(x.data().begin(), x.data().end());
  if (spec.random_start) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += res.eps_used[i / per_example] * unit(rng);
  }
  project(xt, x.data(), res.eps_used, per_example);

  std::optional<Tensor> rsl;
  if (v == Variant::kAdversarialRsl) {
    rsl = teacher->forward(x, GradMode::kNone);
    res.queries.teacher_forward += 1;
  }

  for (int step = 0; step < spec.steps && n > 0; ++step) {
    Tensor xv(x.shape(), xt, true);
    Tape tape;
    Tensor loss;
    {
      Tape::Scope scope(tape);
      loss = objective(v, teacher, student, xv, labels, rsl ? &*rsl : nullptr, spec.temperature);
    }
    tape.backward(loss);
    const auto g = xv.grad_view();
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += spec.step_size * sign(g[i]);
    project(xt, x.data(), res.eps_used, per_example);

    res.queries.student_fb += 1;
    if (v == Variant::kMismatched) res.queries.teacher_fb += 1;
    if (v == Variant::kMismatchedNoTg) res.queries.teacher_forward += 1;
  }

  res.x_tilde = Tensor(x.shape(), std::move(xt));
  if (spec.report_final && n > 0) {
    const Tensor s_logits = student.forward(res.x_tilde);
    res.queries.student_forward += 1;
    if (teacher != nullptr) {
      const Tensor t_logits = teacher->forward(res.x_tilde);
      res.queries.teacher_forward += 1;
      res.kl = ops::kl_rows(t_logits, s_logits, spec.temperature);
    }
    switch (v) {
      case Variant::kAdversarial:
        res.objective = ops::cross_entropy_rows(s_logits, *labels);
        break;
      case Variant::kAdversarialRsl:
        res.objective = ops::kl_rows(*rsl, s_logits, spec.temperature);
        break;
      default:
        res.objective = res.kl;
    }
  }
  return res;
}

OracleResult ball_oracle(const Network& teacher, const Network& student, const Tensor& x, double eps, int n_random,
                         std::uint64_t seed, double temperature) {
  const std::size_t d = x.rank() == 2 ? x.dim(1) : x.numel();
  if ((x.rank() == 2 && x.dim(0) != 1) || x.rank() > 2) {
    throw DimensionError("ball_oracle: expects a single example, got " + shape_str(x.shape()));
  }
  if (d > 16) throw ConfigError("ball_oracle: d = " + std::to_string(d) + " exceeds 16 (2^d corners)");
  const auto center = x.data();

  OracleResult out;
  out.best = -1.0;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  const std::size_t corners = std::size_t{1} << d;
  const std::size_t total = corners + 1 + static_cast<std::size_t>(std::max(0, n_random));
  constexpr std::size_t kChunk = 4096;
  std::vector<double> batch;
  for (std::size_t start = 0; start < total; start += kChunk) {
    const std::size_t m = std::min(kChunk, total - start);
    batch.assign(m * d, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t id = start + r;
      for (std::size_t j = 0; j < d; ++j) {
        double delta = 0.0;
        if (id < corners) {
          delta = ((id >> j) & 1U) ? eps : -eps;
        } else if (id > corners) {
          delta = eps * unit(rng);
        }
        batch[r * d + j] = std::clamp(center[j] + delta, 0.0, 1.0);
      }
    }
    const Tensor cand({m, d}, batch);
    const auto kl = ops::kl_rows(teacher.forward(cand), student.forward(cand), temperature);
    for (std::size_t r = 0; r < m; ++r) {
      if (start + r == corners) out.at_center = kl[r];
      if (kl[r] > out.best) {
        out.best = kl[r];
        out.argmax.assign(batch.begin() + static_cast<std::ptrdiff_t>(r * d),
                          batch.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      }
    }
  }
  return out;
}

}  // namespace afm::worst_case
