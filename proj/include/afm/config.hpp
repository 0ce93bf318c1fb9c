// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "afm/attack.hpp"
#include "afm/trainer.hpp"

namespace afm {

struct DataConfig {
  std::string source = "blobs";  // blobs | images | cifar10 | file
  std::size_t dim = 10;          // blobs
  std::size_t classes = 2;
  std::size_t train_size = 512;  // synthetic sources
  std::size_t test_size = 256;
  double margin = 0.3;
  double spread = 0.05;
  std::size_t channels = 3;  // images
  std::size_t side = 8;
  double noise = 0.1;
  std::string path;            // cifar10 directory or AFMDATA file pair prefix
  std::size_t per_class = 0;   // stratified train subset, 0 = all
  std::size_t test_per_class = 0;
};

struct TeacherConfig {
  std::string arch = "mlp:32";
  std::string checkpoint;  // load when set, else train in-engine
  train::TrainConfig train;
};

struct StudentConfig {
  std::string arch = "mlp:16";
};

/// One experiment: data, networks, outer/inner optimization and attacks.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DataConfig data;
  TeacherConfig teacher;
  StudentConfig student;
  train::TrainConfig train;
  std::vector<attack::AttackConfig> eval;

  /// Key-sorted JSON of every effective setting except output_dir.
  std::string canonical_json() const;
  /// FNV-1a 64 of canonical_json(), as 16 hex digits.
  std::string hash() const;
  void validate() const;
};

/// Parses a YAML document. Unknown keys, wrong types and out-of-range values
/// raise ConfigError carrying "<source>:<line>:<column>". Numeric fields also
/// accept "a/b" fractions such as "8/255".
ExperimentConfig parse_config(const std::string& text, const std::string& source_name = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace afm
