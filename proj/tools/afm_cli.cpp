// SPDX-License-Identifier: Apache-2.0
// afm: command-line front end for the distillation engine.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include "afm/config.hpp"
#include "afm/error.hpp"
#include "afm/oracle.hpp"
#include "afm/rng.hpp"
#include "afm/runner.hpp"
#include "afm/serial.hpp"
#include "afm/runtime.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

void add_common(CLI::App* app, Common& c, bool needs_config) {
  auto* opt = app->add_option("-c,--config", c.config, "experiment config (YAML)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  app->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  app->add_option("-s,--seed", c.seed, "seed override");
  app->add_option("--log-level", c.log_level, "quiet | info")->check(CLI::IsMember({"quiet", "info"}));
}

afm::ExperimentConfig load(const Common& c) {
  afm::ExperimentConfig cfg = c.config.empty() ? afm::ExperimentConfig{} : afm::load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::ostream* logger(const Common& c) { return c.log_level == "quiet" ? nullptr : &std::cerr; }

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_run(const Common& c) {
  const auto cfg = load(c);
  const auto outcome = afm::runner::run(cfg, logger(c));
  std::cout << "config_hash=" << outcome.hash << " seed=" << cfg.seed << " dir=" << outcome.dir.string() << '\n';
  if (!outcome.result.history.empty()) {
    const auto& last = outcome.result.history.back();
    std::cout << "final epoch " << last.epoch << ": clean " << fixed(last.clean_acc) << " fgsm "
              << fixed(last.robust("fgsm")) << " pgd20 " << fixed(last.robust("pgd20")) << '\n';
  }
  return outcome.exit_code;
}

int cmd_ablation(const Common& c, const std::string& suite) {
  const auto cfg = load(c);
  const std::vector<std::uint64_t> seeds{cfg.seed, cfg.seed + 1, cfg.seed + 2};
  const auto rows = afm::runner::run_ablation(suite, cfg, seeds, logger(c));
  std::cout << "cell,clean_acc,fgsm_acc,pgd20_acc (mean over " << seeds.size() << " seeds)\n";
  std::vector<std::string> cells;
  for (const auto& r : rows) {
    if (std::find(cells.begin(), cells.end(), r.cell) == cells.end()) cells.push_back(r.cell);
  }
  using Row = afm::runner::AblationRow;
  for (const auto& cell : cells) {
    std::cout << cell << ',' << fixed(afm::runner::cell_mean(rows, cell, &Row::clean_acc)) << ','
              << fixed(afm::runner::cell_mean(rows, cell, &Row::fgsm_acc)) << ','
              << fixed(afm::runner::cell_mean(rows, cell, &Row::pgd20_acc)) << '\n';
  }
  std::cout << "table: " << (fs::path(cfg.output_dir) / (suite + ".csv")).string() << '\n';
  return 0;
}

int cmd_efficiency(const Common& c, std::size_t batch, int repeats) {
  const auto cfg = load(c);
  const auto data = afm::runner::load_data(cfg.data, cfg.seed);
  const auto dims = data.train.example_dims();
  const auto k = data.train.num_classes;
  // Timing does not depend on weights; freshly initialized networks suffice.
  const auto teacher = afm::build_network(cfg.teacher.arch, dims, k, afm::mix_seed(cfg.seed, 1));
  const auto student = afm::build_network(cfg.student.arch, dims, k, afm::mix_seed(cfg.seed, 2));
  std::vector<std::size_t> idx(std::min(batch, data.train.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto rep = afm::runner::efficiency(teacher, student, data.train.gather(idx), data.train.gather_labels(idx),
                                           afm::runner::efficiency_specs(), repeats);
  const auto csv = rep.csv(cfg.hash(), cfg.seed);
  fs::create_directories(cfg.output_dir);
  std::ofstream(fs::path(cfg.output_dir) / "efficiency.csv") << csv;
  std::cout << csv;
  return 0;
}

int cmd_gradcheck(const Common& c, int probes) {
  const std::uint64_t seed = c.seed.value_or(0);
  const auto reports = afm::oracle::grad_check_suite(probes, seed);
  std::string csv = "# seed=" + std::to_string(seed) + " h=1e-05\nop,probes,max_rel_error,threshold,pass\n";
  bool ok = true;
  for (const auto& r : reports) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.op << " probes=" << r.probes << " max_rel_err=" << err
              << '\n';
    csv += r.op + "," + std::to_string(r.probes) + "," + err + ",1e-04," + (r.passed() ? "1" : "0") + "\n";
    ok = ok && r.passed();
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::ofstream(fs::path(c.out) / "gradcheck.csv") << csv;
  }
  return ok ? 0 : 1;
}

int cmd_certify(const Common& c, int trials, double threshold) {
  auto cfg = load(c);
  const auto data = afm::runner::load_data(cfg.data, cfg.seed);
  if (data.train.example_dims().size() != 1) throw afm::ConfigError("certify needs flat [N,d] data (source: blobs)");
  const auto teacher = afm::runner::obtain_teacher(cfg, data, logger(c));
  auto tc = cfg.train;
  tc.seed = cfg.seed;
  tc.eval_attacks.clear();
  const auto student_init = afm::build_network(cfg.student.arch, data.train.example_dims(), data.train.num_classes,
                                               afm::mix_seed(cfg.seed, 505));
  const auto student = afm::train::train(&teacher, student_init, data.train, data.test, tc).student;
  const auto rep = afm::oracle::certify_inner_max(teacher, student, cfg.train.worst_case, data.test.x, trials,
                                                  threshold, 2048, cfg.seed);
  std::string out = "# config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed) + "\n";
  out += "trials,threshold,hits,fraction,mean_pgd_kl,mean_oracle_kl,max_oracle_kl\n";
  out += std::to_string(rep.trials) + "," + fixed(rep.threshold, 3) + "," + std::to_string(rep.hits) + "," +
         fixed(rep.fraction) + "," + fixed(rep.mean_pgd, 6) + "," + fixed(rep.mean_oracle, 6) + "," +
         fixed(rep.max_oracle, 6) + "\n";
  out += "variant,mean_kl\n";
  for (const auto& [name, kl] : rep.variant_means) out += name + "," + fixed(kl, 6) + "\n";
  fs::create_directories(cfg.output_dir);
  std::ofstream(fs::path(cfg.output_dir) / "certify.csv") << out;
  std::cout << out;
  return 0;
}

int cmd_parse_data(const std::string& path, const std::string& format, const std::string& convert) {
  const auto bytes = afm::read_file(path);
  afm::Dataset ds;
  if (format == "cifar10") {
    ds = afm::parse_cifar10_bin(bytes);
  } else if (format == "cifar100") {
    ds = afm::parse_cifar100_bin(bytes);
  } else {
    ds = afm::parse_dataset(bytes);
  }
  std::map<int, std::size_t> hist;
  for (int y : ds.labels) ++hist[y];
  std::cout << "name=" << ds.name << " n=" << ds.size() << " dims=" << afm::shape_str(ds.example_dims())
            << " classes=" << ds.num_classes << '\n';
  for (const auto& [label, n] : hist) std::cout << "label " << label << ": " << n << '\n';
  if (!convert.empty()) {
    afm::write_file(convert, afm::serialize_dataset(ds));
    std::cout << "wrote " << convert << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  afm::tune_allocator();
  CLI::App app{"afm: robustness distillation engine"};
  app.require_subcommand(1);

  Common run_c, abl_c, eff_c, grad_c, cert_c;
  auto* run = app.add_subcommand("run", "train one experiment from a config");
  add_common(run, run_c, true);

  auto* abl = app.add_subcommand("ablation", "run a predefined comparison grid over three seeds");
  std::string suite;
  abl->add_option("suite", suite, "table3 | table4 | table5 | table7")
      ->required()
      ->check(CLI::IsMember({"table3", "table4", "table5", "table7"}));
  add_common(abl, abl_c, true);

  auto* eff = app.add_subcommand("efficiency", "predicted vs measured worst-case generation cost");
  std::size_t batch = 64;
  int repeats = 5;
  eff->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
  eff->add_option("--repeats", repeats, "timing repeats")->check(CLI::PositiveNumber);
  add_common(eff, eff_c, true);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  int probes = 20;
  grad->add_option("--probes", probes, "random probes per op")->check(CLI::PositiveNumber);
  add_common(grad, grad_c, false);

  auto* cert = app.add_subcommand("certify", "compare PGD against exhaustive ball search on low-d data");
  int trials = 200;
  double threshold = 0.8;
  cert->add_option("--trials", trials, "number of trials")->check(CLI::PositiveNumber);
  cert->add_option("--threshold", threshold, "required fraction of the oracle maximum");
  add_common(cert, cert_c, true);

  auto* parse = app.add_subcommand("parse-data", "parse a dataset file and print a summary");
  std::string data_path, format = "afmdata", convert;
  parse->add_option("file", data_path, "input file")->required()->check(CLI::ExistingFile);
  parse->add_option("--format", format, "cifar10 | cifar100 | afmdata")
      ->check(CLI::IsMember({"cifar10", "cifar100", "afmdata"}));
  parse->add_option("--convert", convert, "write the parsed data as an AFMDATA1 file");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_c);
    if (*abl) return cmd_ablation(abl_c, suite);
    if (*eff) return cmd_efficiency(eff_c, batch, repeats);
    if (*grad) return cmd_gradcheck(grad_c, probes);
    if (*cert) return cmd_certify(cert_c, trials, threshold);
    if (*parse) return cmd_parse_data(data_path, format, convert);
  } catch (const afm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const afm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
