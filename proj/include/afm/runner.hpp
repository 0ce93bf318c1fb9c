// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "afm/config.hpp"
#include "afm/data.hpp"
#include "afm/nn.hpp"
#include "afm/trainer.hpp"

namespace afm::runner {

struct Datasets {
  Dataset train;
  Dataset test;
};

/// Builds or loads the configured train/test pair. Synthetic sources are
/// seeded from `seed`; subsets are stratified.
Datasets load_data(const DataConfig& cfg, std::uint64_t seed);

/// Loads teacher.checkpoint when set, otherwise trains the teacher with
/// teacher.train (hard-label methods only) on the training split.
Network obtain_teacher(const ExperimentConfig& cfg, const Datasets& data, std::ostream* log = nullptr);

/// metrics.csv column list, in order.
const std::vector<std::string>& metrics_columns();
/// One metrics.csv row. Doubles are written with 17 significant digits so
/// that reruns compare bitwise; accuracies of skipped evaluations are "nan".
std::string metrics_row(const ExperimentConfig& cfg, const train::MetricsRecord& rec);
/// "# config_hash=<hash> seed=<seed> aug=<policy>"
std::string metrics_preamble(const ExperimentConfig& cfg);

struct RunOutcome {
  train::TrainResult result;
  std::filesystem::path dir;
  std::string hash;
  int exit_code = 0;  // 0 ok, 3 numeric failure
};

/// Runs one experiment into cfg.output_dir: metrics.csv (written row by row),
/// teacher.ckpt / student.ckpt, accuracy.svg and, on a numeric failure,
/// failure.txt. A preloaded teacher skips teacher acquisition.
RunOutcome run(const ExperimentConfig& cfg, std::ostream* log = nullptr, const Network* teacher = nullptr,
               const Datasets* data = nullptr);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Self-contained SVG line chart; the comment block carries hash and seed.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series, const std::string& hash, std::uint64_t seed);

struct AblationCell {
  std::string label;
  ExperimentConfig cfg;
};

/// The predefined grid of a suite (table3, table4, table5, table7), derived
/// from `base`: data, architectures, epochs and attacks come from the base.
std::vector<AblationCell> ablation_grid(const std::string& suite, const ExperimentConfig& base);

struct AblationRow {
  std::string suite;
  std::string cell;
  std::uint64_t seed = 0;
  double clean_acc = 0.0;
  double fgsm_acc = 0.0;
  double pgd20_acc = 0.0;
  std::string hash;
};

/// Runs every cell for every seed (teacher trained once per seed and shared
/// across cells), writes <output_dir>/<suite>.csv and returns the rows.
std::vector<AblationRow> run_ablation(const std::string& suite, const ExperimentConfig& base,
                                      const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

/// Mean of a column over seeds for one cell.
double cell_mean(const std::vector<AblationRow>& rows, const std::string& cell, double AblationRow::*field);

struct EfficiencyRow {
  std::string spec;
  long fb_t = 0;
  long fb_s = 0;
  double predicted_ms = 0.0;
  double measured_ms = 0.0;
  double error_pct = 0.0;
};

struct EfficiencyReport {
  std::string teacher_arch;
  std::string student_arch;
  std::size_t batch = 0;
  double unit_t_ms = 0.0;  // one teacher input-gradient forward-backward
  double unit_s_ms = 0.0;
  double forward_t_ms = 0.0;  // plain forward, used for the RSL target pass
  double forward_s_ms = 0.0;
  std::vector<EfficiencyRow> rows;

  const EfficiencyRow& row(const std::string& spec) const;
  std::string csv(const std::string& hash, std::uint64_t seed) const;
};

/// Times isolated teacher / student forward-backward passes on `x`, predicts
/// generation time as fb_t * unit_t + fb_s * unit_s (plus any bare forward
/// passes) for each spec from its exact query counts, and measures the real
/// generation time. Timings take the minimum over `repeats`.
EfficiencyReport efficiency(const Network& teacher, const Network& student, const Tensor& x,
                            const std::vector<int>& labels, const std::vector<worst_case::Spec>& specs,
                            int repeats);

/// Default efficiency specs: mismatched(2), adversarial(10), adversarial_rsl(10).
std::vector<worst_case::Spec> efficiency_specs();

}  // namespace afm::runner
