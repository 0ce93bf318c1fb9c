// SPDX-License-Identifier: Apache-2.0
#include "afm/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "afm/error.hpp"

namespace afm {

namespace {

using json = nlohmann::json;

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    const auto m = node.Mark();
    std::string where = source_;
    if (!m.is_null()) where += ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
    throw ConfigError(where + ": " + msg);
  }

  void require_map(const YAML::Node& node, const std::string& what) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
  }

  void check_keys(const YAML::Node& node, const std::string& what, const std::set<std::string>& allowed) const {
    require_map(node, what);
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in " + what);
    }
  }

  double number(const YAML::Node& node, const std::string& key) const {
    if (!node.IsScalar()) fail(node, "'" + key + "' must be a number");
    const auto text = node.Scalar();
    const auto slash = text.find('/');
    try {
      if (slash != std::string::npos) {
        std::size_t p1 = 0, p2 = 0;
        const std::string a = text.substr(0, slash), b = text.substr(slash + 1);
        const double num = std::stod(a, &p1);
        const double den = std::stod(b, &p2);
        if (p1 != a.size() || p2 != b.size() || den == 0.0) throw std::invalid_argument(text);
        return num / den;
      }
      std::size_t pos = 0;
      const double v = std::stod(text, &pos);
      if (pos != text.size()) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      fail(node, "'" + key + "' must be a number, got '" + text + "'");
    }
  }

  long integer(const YAML::Node& node, const std::string& key) const {
    const double v = number(node, key);
    if (v != std::floor(v)) fail(node, "'" + key + "' must be an integer");
    return static_cast<long>(v);
  }

  std::size_t count(const YAML::Node& node, const std::string& key) const {
    const long v = integer(node, key);
    if (v < 0) fail(node, "'" + key + "' must be >= 0");
    return static_cast<std::size_t>(v);
  }

  bool boolean(const YAML::Node& node, const std::string& key) const {
    try {
      return node.as<bool>();
    } catch (const YAML::Exception&) {
      fail(node, "'" + key + "' must be true or false");
    }
  }

  std::string string(const YAML::Node& node, const std::string& key) const {
    if (!node.IsScalar()) fail(node, "'" + key + "' must be a string");
    return node.Scalar();
  }

  // Converts enum-style strings, re-anchoring the engine's error to the node.
  template <typename F>
  auto named(const YAML::Node& node, const std::string& key, F&& from_string) const {
    const auto s = string(node, key);
    try {
      return from_string(s);
    } catch (const Error& e) {
      fail(node, e.what());
    }
  }

 private:
  std::string source_;
};

void parse_worst_case(const Reader& r, const YAML::Node& node, worst_case::Spec& spec) {
  r.check_keys(node, "worst_case",
               {"variant", "steps", "step_size", "eps_train", "eps_add", "random_start", "temperature"});
  if (node["variant"] || node["steps"]) {
    const auto variant =
        node["variant"] ? r.named(node["variant"], "variant", worst_case::variant_from_string) : spec.variant;
    const int steps = node["steps"] ? static_cast<int>(r.integer(node["steps"], "steps")) : spec.steps;
    const double eps_train = spec.eps_train, eps_add = spec.eps_add;
    spec = worst_case::Spec::defaults(variant, steps);
    spec.eps_train = eps_train;
    spec.eps_add = eps_add;
  }
  if (node["step_size"]) spec.step_size = r.number(node["step_size"], "step_size");
  if (node["eps_train"]) spec.eps_train = r.number(node["eps_train"], "eps_train");
  if (node["eps_add"]) spec.eps_add = r.number(node["eps_add"], "eps_add");
  if (node["random_start"]) spec.random_start = r.boolean(node["random_start"], "random_start");
  if (node["temperature"]) spec.temperature = r.number(node["temperature"], "temperature");
  try {
    spec.validate();
  } catch (const Error& e) {
    r.fail(node, e.what());
  }
}

void parse_augmentation(const Reader& r, const YAML::Node& node, augment::AugPolicy& p) {
  r.check_keys(node, "augmentation",
               {"kind", "crop_pad", "cutout_len", "beta_alpha", "randaug_n", "randaug_m", "combo_p", "combo_members"});
  if (node["kind"]) p.kind = r.named(node["kind"], "kind", augment::kind_from_string);
  if (node["crop_pad"]) p.crop_pad = r.count(node["crop_pad"], "crop_pad");
  if (node["cutout_len"]) p.cutout_len = r.count(node["cutout_len"], "cutout_len");
  if (node["beta_alpha"]) p.beta_alpha = r.number(node["beta_alpha"], "beta_alpha");
  if (node["randaug_n"]) p.randaug_n = static_cast<int>(r.integer(node["randaug_n"], "randaug_n"));
  if (node["randaug_m"]) p.randaug_m = static_cast<int>(r.integer(node["randaug_m"], "randaug_m"));
  if (node["combo_p"]) p.combo_p = r.number(node["combo_p"], "combo_p");
  if (const auto m = node["combo_members"]) {
    if (!m.IsSequence() || m.size() != 2) r.fail(m, "'combo_members' must list exactly two kinds");
    for (std::size_t i = 0; i < 2; ++i) p.combo_members[i] = r.named(m[i], "combo_members", augment::kind_from_string);
  }
}

attack::AttackConfig parse_attack(const Reader& r, const YAML::Node& node) {
  r.check_keys(node, "eval entry", {"name", "kind", "eps", "steps", "step_size", "random_start", "restarts"});
  if (!node["kind"]) r.fail(node, "eval entry needs 'kind' (clean, fgsm or pgd)");
  const auto kind = r.string(node["kind"], "kind");
  const double eps = node["eps"] ? r.number(node["eps"], "eps") : 8.0 / 255.0;
  attack::AttackConfig a;
  if (kind == "clean") {
    a = attack::AttackConfig::clean();
  } else if (kind == "fgsm") {
    a = attack::AttackConfig::fgsm(eps);
  } else if (kind == "pgd") {
    a = attack::AttackConfig::pgd(node["steps"] ? static_cast<int>(r.integer(node["steps"], "steps")) : 20, eps);
  } else {
    r.fail(node["kind"], "unknown attack kind '" + kind + "'");
  }
  if (node["name"]) a.name = r.string(node["name"], "name");
  if (node["step_size"]) a.step_size = r.number(node["step_size"], "step_size");
  if (node["random_start"]) a.random_start = r.boolean(node["random_start"], "random_start");
  if (node["restarts"]) a.restarts = static_cast<int>(r.integer(node["restarts"], "restarts"));
  try {
    a.validate();
  } catch (const Error& e) {
    r.fail(node, e.what());
  }
  return a;
}

void parse_train(const Reader& r, const YAML::Node& node, train::TrainConfig& t, const std::string& what) {
  r.check_keys(node, what,
               {"method", "lambda", "temperature", "ls_alpha", "epochs", "warmup_epochs", "batch_size", "lr0",
                "momentum", "nesterov", "weight_decay", "worst_case", "augmentation", "eval_every", "eval_examples"});
  if (node["method"]) t.method = r.named(node["method"], "method", train::method_from_string);
  if (t.method == train::Method::kPgdAt || t.method == train::Method::kPgdAtLs) {
    // Hard-label training searches adversarial examples unless told otherwise.
    if (!node["worst_case"] || !node["worst_case"]["variant"]) {
      t.worst_case = worst_case::Spec::defaults(worst_case::Variant::kAdversarial, 10);
    }
  }
  if (node["lambda"]) t.lambda = r.number(node["lambda"], "lambda");
  if (node["temperature"]) t.temperature = r.number(node["temperature"], "temperature");
  if (node["ls_alpha"]) t.ls_alpha = r.number(node["ls_alpha"], "ls_alpha");
  if (node["epochs"]) t.schedule.total_epochs = static_cast<int>(r.integer(node["epochs"], "epochs"));
  if (node["warmup_epochs"]) t.schedule.warmup_epochs = static_cast<int>(r.integer(node["warmup_epochs"], "warmup_epochs"));
  if (node["batch_size"]) t.schedule.batch_size = r.count(node["batch_size"], "batch_size");
  if (node["lr0"]) t.optimizer.lr0 = r.number(node["lr0"], "lr0");
  if (node["momentum"]) t.optimizer.momentum = r.number(node["momentum"], "momentum");
  if (node["nesterov"]) t.optimizer.nesterov = r.boolean(node["nesterov"], "nesterov");
  if (node["weight_decay"]) t.optimizer.weight_decay = r.number(node["weight_decay"], "weight_decay");
  if (node["worst_case"]) parse_worst_case(r, node["worst_case"], t.worst_case);
  if (node["augmentation"]) parse_augmentation(r, node["augmentation"], t.augmentation);
  if (node["eval_every"]) t.eval_every = static_cast<int>(r.integer(node["eval_every"], "eval_every"));
  if (node["eval_examples"]) t.eval_examples = r.count(node["eval_examples"], "eval_examples");
  try {
    t.validate();
  } catch (const Error& e) {
    r.fail(node, e.what());
  }
}

json spec_json(const worst_case::Spec& s) {
  return {{"variant", worst_case::to_string(s.variant)},
          {"steps", s.steps},
          {"step_size", s.step_size},
          {"eps_train", s.eps_train},
          {"eps_add", s.eps_add},
          {"random_start", s.random_start},
          {"temperature", s.temperature}};
}

json train_json(const train::TrainConfig& t) {
  json attacks = json::array();
  for (const auto& a : t.eval_attacks) attacks.push_back(a.name);
  return {{"method", train::to_string(t.method)},
          {"lambda", t.lambda},
          {"temperature", t.temperature},
          {"ls_alpha", t.ls_alpha},
          {"epochs", t.schedule.total_epochs},
          {"warmup_epochs", t.schedule.warmup_epochs},
          {"batch_size", t.schedule.batch_size},
          {"lr0", t.optimizer.lr0},
          {"momentum", t.optimizer.momentum},
          {"nesterov", t.optimizer.nesterov},
          {"weight_decay", t.optimizer.weight_decay},
          {"worst_case", spec_json(t.worst_case)},
          {"augmentation", augment::describe(t.augmentation)},
          {"eval_every", t.eval_every},
          {"eval_examples", t.eval_examples},
          {"eval_attacks", attacks}};
}

json attack_json(const attack::AttackConfig& a) {
  static const char* kinds[] = {"clean", "fgsm", "pgd"};
  return {{"name", a.name},          {"kind", kinds[static_cast<int>(a.kind)]},
          {"eps", a.eps_test},       {"steps", a.steps},
          {"step_size", a.step_size}, {"random_start", a.random_start},
          {"restarts", a.restarts}};
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string ExperimentConfig::canonical_json() const {
  json eval_list = json::array();
  for (const auto& a : eval) eval_list.push_back(attack_json(a));
  const json j = {{"seed", seed},
                  {"data",
                   {{"source", data.source},
                    {"dim", data.dim},
                    {"classes", data.classes},
                    {"train_size", data.train_size},
                    {"test_size", data.test_size},
                    {"margin", data.margin},
                    {"spread", data.spread},
                    {"channels", data.channels},
                    {"side", data.side},
                    {"noise", data.noise},
                    {"path", data.path},
                    {"per_class", data.per_class},
                    {"test_per_class", data.test_per_class}}},
                  {"teacher", {{"arch", teacher.arch}, {"checkpoint", teacher.checkpoint}, {"train", train_json(teacher.train)}}},
                  {"student", {{"arch", student.arch}}},
                  {"train", train_json(train)},
                  {"eval", eval_list}};
  // nlohmann::json objects are std::map backed, so dump() is key-sorted.
  // output_dir is left out: the same experiment hashes the same wherever it is written.
  return j.dump();
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(canonical_json()); }

void ExperimentConfig::validate() const {
  static const std::set<std::string> sources{"blobs", "images", "cifar10", "file"};
  if (!sources.count(data.source)) throw ConfigError("data.source must be blobs, images, cifar10 or file");
  if ((data.source == "cifar10" || data.source == "file") && data.path.empty()) {
    throw ConfigError("data.path is required for source " + data.source);
  }
  if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
  train.validate();
  if (train.method != train::Method::kPgdAt && train.method != train::Method::kPgdAtLs) teacher.train.validate();
  for (const auto& a : eval) a.validate();
}

ExperimentConfig parse_config(const std::string& text, const std::string& source_name) {
  const Reader r(source_name);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source_name + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                      ": " + e.msg);
  }
  ExperimentConfig cfg;
  if (root.IsNull()) return cfg;
  r.check_keys(root, "config", {"seed", "output_dir", "data", "teacher", "student", "train", "eval"});
  if (root["seed"]) cfg.seed = static_cast<std::uint64_t>(r.count(root["seed"], "seed"));
  if (root["output_dir"]) cfg.output_dir = r.string(root["output_dir"], "output_dir");

  if (const auto d = root["data"]) {
    r.check_keys(d, "data",
                 {"source", "dim", "classes", "train_size", "test_size", "margin", "spread", "channels", "side",
                  "noise", "path", "per_class", "test_per_class"});
    auto& dc = cfg.data;
    if (d["source"]) dc.source = r.string(d["source"], "source");
    if (d["dim"]) dc.dim = r.count(d["dim"], "dim");
    if (d["classes"]) dc.classes = r.count(d["classes"], "classes");
    if (d["train_size"]) dc.train_size = r.count(d["train_size"], "train_size");
    if (d["test_size"]) dc.test_size = r.count(d["test_size"], "test_size");
    if (d["margin"]) dc.margin = r.number(d["margin"], "margin");
    if (d["spread"]) dc.spread = r.number(d["spread"], "spread");
    if (d["channels"]) dc.channels = r.count(d["channels"], "channels");
    if (d["side"]) dc.side = r.count(d["side"], "side");
    if (d["noise"]) dc.noise = r.number(d["noise"], "noise");
    if (d["path"]) dc.path = r.string(d["path"], "path");
    if (d["per_class"]) dc.per_class = r.count(d["per_class"], "per_class");
    if (d["test_per_class"]) dc.test_per_class = r.count(d["test_per_class"], "test_per_class");
    if (d["source"] && dc.source != "blobs" && dc.source != "images" && dc.source != "cifar10" && dc.source != "file") {
      r.fail(d["source"], "unknown data source '" + dc.source + "'");
    }
  }

  // Teacher defaults: PGD-AT, 10-step adversarial search.
  cfg.teacher.train.method = train::Method::kPgdAt;
  cfg.teacher.train.worst_case = worst_case::Spec::defaults(worst_case::Variant::kAdversarial, 10);
  if (const auto t = root["teacher"]) {
    r.check_keys(t, "teacher", {"arch", "checkpoint", "train"});
    if (t["arch"]) cfg.teacher.arch = r.string(t["arch"], "arch");
    if (t["checkpoint"]) cfg.teacher.checkpoint = r.string(t["checkpoint"], "checkpoint");
    if (t["train"]) parse_train(r, t["train"], cfg.teacher.train, "teacher.train");
  }
  if (const auto s = root["student"]) {
    r.check_keys(s, "student", {"arch"});
    if (s["arch"]) cfg.student.arch = r.string(s["arch"], "arch");
  }
  if (const auto t = root["train"]) parse_train(r, t, cfg.train, "train");

  if (const auto e = root["eval"]) {
    if (!e.IsSequence()) r.fail(e, "eval must be a list of attacks");
    for (const auto& item : e) cfg.eval.push_back(parse_attack(r, item));
  } else {
    cfg.eval = {attack::AttackConfig::fgsm(), attack::AttackConfig::pgd(20)};
  }
  cfg.train.eval_attacks = cfg.eval;
  cfg.teacher.train.eval_attacks = cfg.eval;

  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ConfigError(source_name + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace afm
