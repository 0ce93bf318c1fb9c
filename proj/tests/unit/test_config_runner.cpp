// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "afm/config.hpp"
#include "afm/error.hpp"
#include "afm/runner.hpp"

using namespace afm;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(seed: 4
data: {source: blobs, dim: 6, train_size: 128, test_size: 64}
teacher:
  arch: mlp:8
  train: {method: pgd_at, epochs: 3, warmup_epochs: 1, batch_size: 32, lr0: 0.1,
          worst_case: {variant: adversarial, steps: 3, eps_train: 8/255}}
student: {arch: mlp:6}
train:
  method: advfunmatch
  epochs: 3
  warmup_epochs: 1
  batch_size: 32
  lr0: 0.1
  worst_case: {variant: mismatched, steps: 2, eps_train: 8/255, eps_add: 6/255}
eval:
  - {kind: fgsm}
  - {kind: pgd, steps: 20}
)";

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "x.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// metrics.csv with the wall-clock column blanked.
std::string without_wall(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') {
      const auto cut = line.rfind(',');
      if (cut != std::string::npos) line.resize(cut);
    }
    out += line + "\n";
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("afm_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, UnknownKeyReportsLineAndColumn) {
  const auto msg = config_error("seed: 1\ntrain:\n  lambada: 0.5\n");
  EXPECT_NE(msg.find("x.yaml:3:3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("lambada"), std::string::npos) << msg;
}

TEST(Config, TypeAndRangeErrors) {
  EXPECT_NE(config_error("train: {lambda: 1.5}\n").find("x.yaml:1:"), std::string::npos);
  EXPECT_FALSE(config_error("train: {epochs: many}\n").empty());
  EXPECT_FALSE(config_error("train: {method: sgd}\n").empty());
  EXPECT_FALSE(config_error("train: [1, 2\n").empty());
}

TEST(Config, FractionsAndDefaults) {
  const auto c = parse_config("train: {worst_case: {variant: mismatched, steps: 2, eps_train: 8/255}}\n");
  EXPECT_DOUBLE_EQ(c.train.worst_case.eps_train, 8.0 / 255.0);
  EXPECT_EQ(c.train.method, train::Method::kAdvFunMatch);
  EXPECT_DOUBLE_EQ(c.train.lambda, 0.9);
  EXPECT_EQ(parse_config("").hash(), ExperimentConfig{}.hash());
}

TEST(Config, HashIgnoresKeyOrderAndOutputDir) {
  const auto a = parse_config("seed: 3\noutput_dir: a\ntrain: {lambda: 0.5, epochs: 7}\n");
  const auto b = parse_config("train: {epochs: 7, lambda: 0.5}\noutput_dir: b\nseed: 3\n");
  const auto c = parse_config("seed: 3\ntrain: {lambda: 0.6, epochs: 7}\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, FnvReferenceVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Runner, RerunProducesIdenticalMetrics) {
  auto cfg = parse_config(kSmall);
  cfg.output_dir = scratch("rerun_a").string();
  const auto a = runner::run(cfg);
  cfg.output_dir = scratch("rerun_b").string();
  const auto b = runner::run(cfg);
  ASSERT_EQ(a.exit_code, 0);
  const auto ma = slurp(a.dir / "metrics.csv"), mb = slurp(b.dir / "metrics.csv");
  EXPECT_EQ(without_wall(ma), without_wall(mb));
  EXPECT_NE(ma.find("# config_hash=" + cfg.hash()), std::string::npos);
  EXPECT_TRUE(fs::exists(a.dir / "student.ckpt"));
  EXPECT_TRUE(fs::exists(a.dir / "teacher.ckpt"));
  const auto svg = slurp(a.dir / "accuracy.svg");
  EXPECT_NE(svg.find(cfg.hash()), std::string::npos);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
}

TEST(Runner, MetricsHeaderAndRowWidth) {
  auto cfg = parse_config(kSmall);
  cfg.output_dir = scratch("header").string();
  const auto out = runner::run(cfg);
  std::istringstream in(slurp(out.dir / "metrics.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line[0], '#');
  std::getline(in, line);
  EXPECT_EQ(line.rfind("epoch,method,variant,steps", 0), 0u);
  const auto cols = std::count(line.begin(), line.end(), ',');
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), cols);
    ++rows;
  }
  EXPECT_EQ(rows, 3);
}

TEST(Runner, NumericFailureWritesRecordAndKeepsRows) {
  auto cfg = parse_config(kSmall);
  cfg.train.optimizer.lr0 = 1e200;
  cfg.train.schedule.warmup_epochs = 0;
  cfg.output_dir = scratch("failure").string();
  const auto out = runner::run(cfg);
  EXPECT_EQ(out.exit_code, 3);
  EXPECT_TRUE(fs::exists(out.dir / "failure.txt"));
  EXPECT_TRUE(fs::exists(out.dir / "metrics.csv"));
  EXPECT_FALSE(slurp(out.dir / "failure.txt").empty());
}

TEST(Runner, TeacherCheckpointIsReused) {
  auto cfg = parse_config(kSmall);
  cfg.output_dir = scratch("ckpt_a").string();
  const auto a = runner::run(cfg);
  auto cfg2 = cfg;
  cfg2.teacher.checkpoint = (a.dir / "teacher.ckpt").string();
  cfg2.output_dir = scratch("ckpt_b").string();
  const auto b = runner::run(cfg2);
  EXPECT_EQ(a.result.student.flat_params(), b.result.student.flat_params());
  auto bad = cfg2;
  bad.data.dim = 7;
  bad.output_dir = scratch("ckpt_c").string();
  EXPECT_THROW(runner::run(bad), Error);
}

TEST(Ablation, GridsHaveExpectedCells) {
  const auto base = parse_config(kSmall);
  const auto t3 = runner::ablation_grid("table3", base);
  ASSERT_EQ(t3.size(), 6u);
  EXPECT_EQ(t3[3].label, "mismatched_2");
  EXPECT_EQ(t3[3].cfg.train.worst_case.steps, 2);
  EXPECT_EQ(t3[3].cfg.train.worst_case.eps_add, 0.0);
  const auto t4 = runner::ablation_grid("table4", base);
  ASSERT_EQ(t4.size(), 4u);
  EXPECT_DOUBLE_EQ(t4[3].cfg.train.worst_case.eps_add, 8.0 / 255.0);
  EXPECT_EQ(runner::ablation_grid("table7", base).size(), 8u);
  auto img = base;
  img.data.source = "images";
  EXPECT_EQ(runner::ablation_grid("table5", img).size(), 6u);
  EXPECT_THROW(runner::ablation_grid("table9", base), ConfigError);
  std::set<std::string> hashes;
  for (const auto& c : t3) hashes.insert(c.cfg.hash());
  EXPECT_EQ(hashes.size(), 6u);
}

TEST(Efficiency, QueryCountsAndPrediction) {
  const auto t = build_network("mlp:32", {10}, 2, 1), s = build_network("mlp:16", {10}, 2, 2);
  const auto data = synth_blobs(10, 2, 64, 0.3, 1);
  const auto rep = runner::efficiency(t, s, data.x, data.labels, runner::efficiency_specs(), 3);
  const auto& mis = rep.row("mismatched(2)");
  const auto& adv = rep.row("adversarial(10)");
  EXPECT_EQ(mis.fb_t, 2);
  EXPECT_EQ(mis.fb_s, 2);
  EXPECT_EQ(adv.fb_t, 0);
  EXPECT_EQ(adv.fb_s, 10);
  EXPECT_NEAR(mis.predicted_ms, 2 * rep.unit_t_ms + 2 * rep.unit_s_ms, 1e-9);
  EXPECT_NEAR(adv.predicted_ms, 10 * rep.unit_s_ms, 1e-9);
  const auto csv = rep.csv("h", 0);
  EXPECT_NE(csv.find("mismatched(2)"), std::string::npos);
  EXPECT_THROW(rep.row("nope"), Error);
}
