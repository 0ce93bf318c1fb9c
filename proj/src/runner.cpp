// SPDX-License-Identifier: Apache-2.0
#include "afm/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "afm/error.hpp"
#include "afm/ops.hpp"
#include "afm/oracle.hpp"
#include "afm/rng.hpp"
#include "afm/serial.hpp"

namespace afm::runner {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDataStream = 501;
constexpr std::uint64_t kSubsetStream = 502;
constexpr std::uint64_t kTeacherInit = 503;
constexpr std::uint64_t kTeacherTrain = 504;
constexpr std::uint64_t kStudentInit = 505;

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end, const std::string& name) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  Dataset out{ds.gather(idx), ds.gather_labels(idx), ds.num_classes, name};
  return out;
}

void say(std::ostream* log, const std::string& line) {
  if (log) *log << line << '\n' << std::flush;
}

}  // namespace

Datasets load_data(const DataConfig& cfg, std::uint64_t seed) {
  Datasets d;
  const std::uint64_t s = mix_seed(seed, kDataStream);
  if (cfg.source == "blobs" || cfg.source == "images") {
    // One draw split in two, so train and test share class centres.
    const std::size_t n = cfg.train_size + cfg.test_size;
    const Dataset all = cfg.source == "blobs"
                            ? synth_blobs(cfg.dim, cfg.classes, n, cfg.margin, s, cfg.spread)
                            : synth_images(cfg.channels, cfg.side, cfg.classes, n, cfg.noise, s);
    d.train = slice(all, 0, cfg.train_size, all.name + "-train");
    d.test = slice(all, cfg.train_size, n, all.name + "-test");
  } else if (cfg.source == "cifar10") {
    d.train = load_cifar10_dir(cfg.path, true);
    d.test = load_cifar10_dir(cfg.path, false);
  } else if (cfg.source == "file") {
    d.train = parse_dataset(read_file(fs::path(cfg.path) / "train.afmdata"));
    d.test = parse_dataset(read_file(fs::path(cfg.path) / "test.afmdata"));
  } else {
    throw ConfigError("unknown data source '" + cfg.source + "'");
  }
  if (cfg.per_class > 0) d.train = subset(d.train, cfg.per_class, mix_seed(seed, kSubsetStream));
  if (cfg.test_per_class > 0) d.test = subset(d.test, cfg.test_per_class, mix_seed(seed, kSubsetStream + 1));
  return d;
}

Network obtain_teacher(const ExperimentConfig& cfg, const Datasets& data, std::ostream* log) {
  if (!cfg.teacher.checkpoint.empty()) {
    CheckpointMeta meta;
    Network t = load_checkpoint(cfg.teacher.checkpoint, &meta);
    if (t.input_dims() != data.train.example_dims() || t.num_classes() != data.train.num_classes) {
      throw ConfigError("teacher checkpoint " + cfg.teacher.checkpoint + " expects " + shape_str(t.input_dims()) +
                        " inputs and " + std::to_string(t.num_classes()) + " classes");
    }
    say(log, "teacher: loaded " + cfg.teacher.checkpoint);
    return t;
  }
  auto tc = cfg.teacher.train;
  if (tc.method != train::Method::kPgdAt && tc.method != train::Method::kPgdAtLs) {
    throw ConfigError("teacher.train.method must be pgd_at or pgd_at_ls when no checkpoint is given");
  }
  tc.seed = mix_seed(cfg.seed, kTeacherTrain);
  const Network init = build_network(cfg.teacher.arch, data.train.example_dims(), data.train.num_classes,
                                     mix_seed(cfg.seed, kTeacherInit));
  say(log, "teacher: training " + cfg.teacher.arch + " with " + train::to_string(tc.method) + " for " +
               std::to_string(tc.schedule.total_epochs) + " epochs");
  auto res = train::train(nullptr, init, data.train, data.test, tc, [&](const train::MetricsRecord& r) {
    if (r.evaluated) {
      say(log, "teacher epoch " + std::to_string(r.epoch) + " loss " + num(r.train_loss) + " clean " +
                   num(r.clean_acc));
    }
  });
  if (res.failure) throw NumericError("teacher training failed: " + res.failure->message);
  return std::move(res.student);
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{"epoch",     "method",        "variant",       "steps",    "eps_train",
                                             "eps_add",   "aug",           "clean_acc",     "fgsm_acc", "pgd20_acc",
                                             "mean_kl_clean", "mean_kl_worst", "lr",         "fb_t",     "fb_s",
                                             "wall_ms"};
  return cols;
}

std::string metrics_preamble(const ExperimentConfig& cfg) {
  return "# config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed) +
         " aug=" + augment::describe(cfg.train.augmentation);
}

std::string metrics_row(const ExperimentConfig& cfg, const train::MetricsRecord& rec) {
  const auto& t = cfg.train;
  const auto& wc = t.worst_case;
  const bool matched = t.method == train::Method::kFunMatch;
  const double nan = std::nan("");
  std::string row;
  auto put = [&](const std::string& field) {
    if (!row.empty()) row += ',';
    row += field;
  };
  put(std::to_string(rec.epoch));
  put(train::to_string(t.method));
  put(matched ? "clean" : worst_case::to_string(wc.variant));
  put(std::to_string(matched ? 0 : wc.steps));
  put(num(wc.eps_train));
  put(num(wc.eps_add));
  put(augment::to_string(t.augmentation.kind));
  put(num(rec.evaluated ? rec.clean_acc : nan));
  put(num(rec.evaluated ? rec.robust("fgsm") : nan));
  put(num(rec.evaluated ? rec.robust("pgd20") : nan));
  put(num(rec.mean_kl_clean));
  put(num(rec.mean_kl_worst));
  put(num(rec.lr));
  put(std::to_string(rec.fb_t_count));
  put(std::to_string(rec.fb_s_count));
  put(num(rec.wallclock_ms));
  return row;
}

RunOutcome run(const ExperimentConfig& cfg_in, std::ostream* log, const Network* teacher_in, const Datasets* data_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.validate();
  RunOutcome out;
  out.hash = cfg.hash();
  out.dir = cfg.output_dir;
  fs::create_directories(out.dir);

  std::optional<Datasets> own_data;
  if (!data_in) own_data = load_data(cfg.data, cfg.seed);
  const Datasets& data = data_in ? *data_in : *own_data;

  const bool needs_teacher =
      cfg.train.method == train::Method::kFunMatch || cfg.train.method == train::Method::kAdvFunMatch;
  std::optional<Network> own_teacher;
  const Network* teacher = teacher_in;
  if (needs_teacher && !teacher) {
    own_teacher = obtain_teacher(cfg, data, log);
    teacher = &*own_teacher;
    CheckpointMeta tm{teacher->input_dims(), teacher->num_classes(), cfg.teacher.train.schedule.total_epochs,
                      cfg.seed, out.hash};
    save_checkpoint(out.dir / "teacher.ckpt", *teacher, tm);
  }

  const Network student = build_network(cfg.student.arch, data.train.example_dims(), data.train.num_classes,
                                        mix_seed(cfg.seed, kStudentInit));
  auto tc = cfg.train;
  tc.seed = cfg.seed;

  std::ofstream csv(out.dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw Error("cannot write " + (out.dir / "metrics.csv").string());
  csv << metrics_preamble(cfg) << '\n';
  for (std::size_t i = 0; i < metrics_columns().size(); ++i) csv << (i ? "," : "") << metrics_columns()[i];
  csv << '\n' << std::flush;

  say(log, "run " + out.hash + ": " + train::to_string(tc.method) + " student " + cfg.student.arch + " on " +
               data.train.name + " (" + std::to_string(data.train.size()) + " train, " +
               std::to_string(data.test.size()) + " test)");
  out.result = train::train(needs_teacher ? teacher : nullptr, student, data.train, data.test, tc,
                            [&](const train::MetricsRecord& r) {
                              csv << metrics_row(cfg, r) << '\n' << std::flush;
                              if (r.evaluated) {
                                say(log, "epoch " + std::to_string(r.epoch) + " loss " + num(r.train_loss) +
                                             " clean " + num(r.clean_acc) + " pgd20 " + num(r.robust("pgd20")));
                              }
                            });

  const CheckpointMeta sm{student.input_dims(), student.num_classes(),
                          out.result.history.empty() ? 0 : out.result.history.back().epoch, cfg.seed, out.hash};
  save_checkpoint(out.dir / "student.ckpt", out.result.student, sm);

  std::vector<Series> series;
  for (const std::string name : {"clean", "fgsm", "pgd20"}) {
    Series s{name, {}, {}};
    for (const auto& r : out.result.history) {
      if (!r.evaluated) continue;
      const double y = name == "clean" ? r.clean_acc : r.robust(name);
      if (std::isnan(y)) continue;
      s.x.push_back(r.epoch);
      s.y.push_back(y);
    }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  std::ofstream svg(out.dir / "accuracy.svg", std::ios::trunc);
  svg << svg_line_chart("accuracy per epoch", "epoch", "accuracy", series, out.hash, cfg.seed);

  if (out.result.failure) {
    const auto& f = *out.result.failure;
    std::ofstream fail(out.dir / "failure.txt", std::ios::trunc);
    fail << "# config_hash=" << out.hash << " seed=" << cfg.seed << '\n'
         << "epoch=" << f.epoch << '\n'
         << "batch=" << f.batch << '\n'
         << "lr=" << num(f.lr) << '\n'
         << "message=" << f.message << '\n';
    say(log, "run failed: " + f.message);
    out.exit_code = 3;
  }
  return out;
}

std::vector<AblationCell> ablation_grid(const std::string& suite, const ExperimentConfig& base) {
  using worst_case::Spec;
  using worst_case::Variant;
  std::vector<AblationCell> cells;
  auto cell = [&](const std::string& label, auto&& edit) {
    ExperimentConfig c = base;
    edit(c);
    c.output_dir = (fs::path(base.output_dir) / suite / label).string();
    cells.push_back({label, std::move(c)});
  };
  auto matching = [&](Variant v, int steps) {
    return [=](ExperimentConfig& c) {
      c.train.method = train::Method::kAdvFunMatch;
      c.train.worst_case = Spec::defaults(v, steps);
      c.train.worst_case.eps_train = base.train.worst_case.eps_train;
      c.train.worst_case.eps_add = 0.0;
    };
  };
  auto with_aug = [&](augment::Kind k) {
    return [=](ExperimentConfig& c) {
      c.train.method = train::Method::kAdvFunMatch;
      c.train.augmentation.kind = k;
    };
  };
  if (suite == "table3") {
    cell("adversarial_10", matching(Variant::kAdversarial, 10));
    cell("adversarial_rsl_10", matching(Variant::kAdversarialRsl, 10));
    cell("mismatched_10", matching(Variant::kMismatched, 10));
    cell("mismatched_2", matching(Variant::kMismatched, 2));
    cell("mismatched_no_tg_10", matching(Variant::kMismatchedNoTg, 10));
    cell("mismatched_no_tg_2", matching(Variant::kMismatchedNoTg, 2));
  } else if (suite == "table4") {
    for (int k : {0, 4, 6, 8}) {
      cell("eps_add_" + std::to_string(k), [=](ExperimentConfig& c) {
        c.train.method = train::Method::kAdvFunMatch;
        c.train.worst_case.eps_add = k / 255.0;
      });
    }
  } else if (suite == "table5") {
    const bool image = base.data.source != "blobs";
    cell(image ? "flip_crop" : "none", with_aug(image ? augment::Kind::kFlipCrop : augment::Kind::kNone));
    if (image) {
      cell("mixup", with_aug(augment::Kind::kMixup));
      cell("cutout", with_aug(augment::Kind::kCutout));
      cell("cutmix", with_aug(augment::Kind::kCutmix));
      cell("randaug_lite", with_aug(augment::Kind::kRandAugLite));
      cell("randaug_lite+cutmix", with_aug(augment::Kind::kCombo));
    } else {
      cell("mixup", with_aug(augment::Kind::kMixup));
    }
  } else if (suite == "table7") {
    const bool image = base.data.source != "blobs";
    const auto weak = image ? augment::Kind::kFlipCrop : augment::Kind::kNone;
    const auto strong = image ? augment::Kind::kRandAugLite : augment::Kind::kMixup;
    const std::pair<std::string, train::Method> methods[] = {{"pgd_at", train::Method::kPgdAt},
                                                             {"pgd_at_ls", train::Method::kPgdAtLs},
                                                             {"funmatch", train::Method::kFunMatch},
                                                             {"advfunmatch", train::Method::kAdvFunMatch}};
    for (const auto& [name, m] : methods) {
      for (const auto aug : {weak, strong}) {
        cell(name + "+" + augment::to_string(aug), [=](ExperimentConfig& c) {
          c.train.method = m;
          c.train.augmentation.kind = aug;
          if (m == train::Method::kPgdAt || m == train::Method::kPgdAtLs) {
            c.train.worst_case = Spec::defaults(Variant::kAdversarial, 10);
            c.train.worst_case.eps_train = base.train.worst_case.eps_train;
          }
        });
      }
    }
  } else {
    throw ConfigError("unknown ablation suite '" + suite + "' (table3, table4, table5, table7)");
  }
  return cells;
}

std::vector<AblationRow> run_ablation(const std::string& suite, const ExperimentConfig& base,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  const auto grid = ablation_grid(suite, base);
  std::vector<AblationRow> rows;
  const fs::path dir = fs::path(base.output_dir);
  fs::create_directories(dir);
  std::ofstream csv(dir / (suite + ".csv"), std::ios::trunc);
  csv << "# suite=" << suite << " base_config_hash=" << base.hash() << '\n'
      << "suite,cell,seed,clean_acc,fgsm_acc,pgd20_acc,config_hash\n";
  for (const auto seed : seeds) {
    ExperimentConfig seeded = base;
    seeded.seed = seed;
    const Datasets data = load_data(seeded.data, seed);
    std::optional<Network> teacher;
    for (const auto& cell : grid) {
      ExperimentConfig c = cell.cfg;
      c.seed = seed;
      c.output_dir = (fs::path(c.output_dir) / ("seed" + std::to_string(seed))).string();
      const bool distill = c.train.method == train::Method::kFunMatch || c.train.method == train::Method::kAdvFunMatch;
      if (distill && !teacher) teacher = obtain_teacher(seeded, data, log);
      say(log, suite + " cell " + cell.label + " seed " + std::to_string(seed));
      const auto outcome = run(c, log, distill ? &*teacher : nullptr, &data);
      AblationRow row{suite, cell.label, seed, std::nan(""), std::nan(""), std::nan(""), outcome.hash};
      if (!outcome.result.history.empty()) {
        const auto& last = outcome.result.history.back();
        row.clean_acc = last.clean_acc;
        row.fgsm_acc = last.robust("fgsm");
        row.pgd20_acc = last.robust("pgd20");
      }
      csv << row.suite << ',' << row.cell << ',' << row.seed << ',' << num(row.clean_acc) << ',' << num(row.fgsm_acc)
          << ',' << num(row.pgd20_acc) << ',' << row.hash << '\n'
          << std::flush;
      rows.push_back(row);
    }
  }
  return rows;
}

double cell_mean(const std::vector<AblationRow>& rows, const std::string& cell, double AblationRow::*field) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.cell != cell) continue;
    s += r.*field;
    ++n;
  }
  return n == 0 ? std::nan("") : s / n;
}

const EfficiencyRow& EfficiencyReport::row(const std::string& spec) const {
  for (const auto& r : rows) {
    if (r.spec == spec) return r;
  }
  throw ConfigError("efficiency report has no row '" + spec + "'");
}

std::string EfficiencyReport::csv(const std::string& hash, std::uint64_t seed) const {
  std::string out = "# config_hash=" + hash + " seed=" + std::to_string(seed) + " teacher=" + teacher_arch +
                    " student=" + student_arch + " batch=" + std::to_string(batch) +
                    " unit_t_ms=" + num(unit_t_ms) + " unit_s_ms=" + num(unit_s_ms) + " forward_t_ms=" + num(forward_t_ms) +
                    " forward_s_ms=" + num(forward_s_ms) + "\n";
  out += "spec,fb_t,fb_s,predicted_units,predicted_ms,measured_ms,error_pct\n";
  for (const auto& r : rows) {
    const double units = unit_s_ms > 0 ? r.predicted_ms / unit_s_ms : 0.0;
    out += r.spec + "," + std::to_string(r.fb_t) + "," + std::to_string(r.fb_s) + "," + num(units) + "," +
           num(r.predicted_ms) + "," + num(r.measured_ms) + "," + num(r.error_pct) + "\n";
  }
  return out;
}

namespace {

template <typename F>
double elapsed_ms(F&& f) {
  const auto a = std::chrono::steady_clock::now();
  f();
  const auto b = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(b - a).count();
}

// One input-gradient forward-backward through `net`, as done inside generate.
void input_fb(const Network& net, const Tensor& x) {
  Tensor leaf = x.detach().set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  const Tensor out = ops::sum(net.forward(leaf, GradMode::kInputOnly));
  tape.backward(out);
}

}  // namespace

std::vector<worst_case::Spec> efficiency_specs() {
  using worst_case::Variant;
  std::vector<worst_case::Spec> specs;
  for (auto [v, k] : {std::pair{Variant::kMismatched, 2}, {Variant::kAdversarial, 10}, {Variant::kAdversarialRsl, 10}}) {
    auto s = worst_case::Spec::defaults(v, k);
    s.random_start = false;
    s.report_final = false;
    specs.push_back(s);
  }
  return specs;
}

EfficiencyReport efficiency(const Network& teacher, const Network& student, const Tensor& x,
                            const std::vector<int>& labels, const std::vector<worst_case::Spec>& specs, int repeats) {
  if (repeats < 1) throw ConfigError("efficiency: repeats must be >= 1");
  EfficiencyReport rep;
  rep.teacher_arch = teacher.arch_id();
  rep.student_arch = student.arch_id();
  rep.batch = x.dim(0);
  input_fb(teacher, x);  // warm caches and allocator
  input_fb(student, x);

  std::vector<worst_case::Spec> run_specs = specs;
  for (auto& s : run_specs) s.report_final = false;
  std::vector<worst_case::GradQueries> queries(run_specs.size());
  std::vector<double> measured(run_specs.size(), INFINITY);
  double ut = INFINITY, us = INFINITY, ft = INFINITY, fs_ = INFINITY;
  // Rounds interleave every measurement and keep the minimum of each, so slow
  // drift in machine speed hits units and generations alike; scheduler
  // noise only ever adds time.
  for (int round = 0; round < repeats; ++round) {
    ut = std::min(ut, elapsed_ms([&] { input_fb(teacher, x); }));
    us = std::min(us, elapsed_ms([&] { input_fb(student, x); }));
    ft = std::min(ft, elapsed_ms([&] { (void)teacher.forward(x); }));
    fs_ = std::min(fs_, elapsed_ms([&] { (void)student.forward(x); }));
    for (std::size_t i = 0; i < run_specs.size(); ++i) {
      measured[i] = std::min(measured[i], elapsed_ms([&] {
        queries[i] = worst_case::generate(run_specs[i], &teacher, student, x, &labels).queries;
      }));
    }
  }
  rep.unit_t_ms = ut;
  rep.unit_s_ms = us;
  rep.forward_t_ms = ft;
  rep.forward_s_ms = fs_;
  for (std::size_t i = 0; i < run_specs.size(); ++i) {
    const auto& q = queries[i];
    EfficiencyRow r;
    r.spec = oracle::spec_label(run_specs[i]);
    r.measured_ms = measured[i];
    r.fb_t = q.teacher_fb;
    r.fb_s = q.student_fb;
    r.predicted_ms = static_cast<double>(q.teacher_fb) * rep.unit_t_ms +
                     static_cast<double>(q.student_fb) * rep.unit_s_ms +
                     static_cast<double>(q.teacher_forward) * rep.forward_t_ms +
                     static_cast<double>(q.student_forward) * rep.forward_s_ms;
    r.error_pct = 100.0 * (r.measured_ms - r.predicted_ms) / r.predicted_ms;
    rep.rows.push_back(r);
  }
  return rep;
}

}  // namespace afm::runner
