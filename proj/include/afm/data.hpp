// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afm/tensor.hpp"

namespace afm {

/// Labelled examples with pixels (or features) kept in [0,1]; no mean/std
/// normalization, so perturbation radii are in raw pixel units.
struct Dataset {
  Tensor x;  // [N, C, H, W] or [N, d]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  Shape example_dims() const;
  /// Copies rows `indices` into a new batch tensor.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const;
  /// Checks the Dataset invariants, throwing FormatError.
  void validate() const;
};

inline constexpr std::size_t kCifarRecordPixels = 3 * 32 * 32;

/// CIFAR-10 binary batch: per record one label byte, then 3072 pixel bytes
/// (R plane, G plane, B plane; each 32x32 row-major).
Dataset parse_cifar10_bin(const std::vector<std::uint8_t>& bytes, const std::string& name = "cifar10");

/// CIFAR-100 binary: coarse label byte, fine label byte, then 3072 pixel bytes.
Dataset parse_cifar100_bin(const std::vector<std::uint8_t>& bytes, bool fine_labels = true,
                           const std::string& name = "cifar100");

/// Inverse of parse_cifar10_bin for datasets of shape [N,3,32,32] whose
/// pixels are multiples of 1/255.
std::vector<std::uint8_t> serialize_cifar10_bin(const Dataset& ds);

/// Concatenates the standard files found in a CIFAR-10 directory
/// (data_batch_1..5.bin for train, test_batch.bin for test).
Dataset load_cifar10_dir(const std::filesystem::path& dir, bool train);

/// Stratified, seeded sample of `per_class` examples per class.
Dataset subset(const Dataset& ds, std::size_t per_class, std::uint64_t seed);

/// `k` Gaussian blobs in [0,1]^d. Class centres sit `margin` apart around
/// the cube centre, with isotropic noise of std `spread`; values clipped.
Dataset synth_blobs(std::size_t d, std::size_t k, std::size_t n, double margin, std::uint64_t seed,
                    double spread = 0.05);

/// Gaussian-blob images: each class is a random smooth template in
/// [C,H,W] plus pixel noise. Used for desk-scale CNN runs and tests.
Dataset synth_images(std::size_t channels, std::size_t side, std::size_t k, std::size_t n, double noise,
                     std::uint64_t seed);

// AFMDATA1 container (little-endian):
//   "AFMDATA1", u32 name length, name, u32 num_classes,
//   u32 rank, u64 dims[rank] (dims[0] == N),
//   i32 labels[N], f64 values[prod(dims)]
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset parse_dataset(const std::vector<std::uint8_t>& bytes);

}  // namespace afm
