// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afm/tensor.hpp"

namespace afm {

enum class LayerKind { kDense, kConv2d, kRelu, kFlatten, kAvgPool };

struct LayerDesc {
  LayerKind kind;
  std::size_t in = 0;   // dense: in features; conv: in channels
  std::size_t out = 0;  // dense: out features; conv: out channels
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t param_index = 0;  // weight at params[param_index], bias at +1
};

/// Whether a forward pass records onto the active tape and, if so, whether
/// parameters take part in differentiation.
enum class GradMode {
  kNone,        // plain evaluation, nothing recorded
  kInputOnly,   // records w.r.t. the input; parameters treated as constants
  kFull,        // records w.r.t. input and parameters
};

/// Metadata stored alongside checkpoint parameters.
struct CheckpointMeta {
  Shape input_dims;  // per-example dims, e.g. {3,32,32} or {10}
  std::size_t num_classes = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Feed-forward classifier producing logits.
///
/// Supported arch ids:
///   "mlp" / "mlp:<hidden>"            flatten, dense, relu, dense
///   "mlp2" / "mlp2:<hidden>"          two hidden layers
///   "cnn-tiny"                        conv3x3(8), relu, avgpool2, dense
///   "cnn-small"                       two conv3x3 blocks (16, 32) with avgpool2, dense
class Network {
 public:
  const std::string& arch_id() const { return arch_id_; }
  const Shape& input_dims() const { return input_dims_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<LayerDesc>& layers() const { return layers_; }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t param_count() const;

  /// x: [N, input_dims...] -> logits [N, num_classes].
  Tensor forward(const Tensor& x, GradMode mode = GradMode::kNone) const;

  void zero_grad();
  /// Deep copy with independent parameter storage.
  Network clone() const;
  /// Concatenated parameter values, for bitwise comparisons.
  std::vector<double> flat_params() const;

  friend Network build_network(const std::string&, const Shape&, std::size_t, std::uint64_t);

 private:
  std::string arch_id_;
  Shape input_dims_;
  std::size_t num_classes_ = 0;
  std::vector<LayerDesc> layers_;
  std::vector<Tensor> params_;
};

/// Kaiming-uniform weights, zero biases, deterministic in seed.
Network build_network(const std::string& arch_id, const Shape& input_dims, std::size_t num_classes,
                      std::uint64_t seed);

/// Parameter count implied by an architecture, without allocating it.
std::size_t arch_param_count(const std::string& arch_id, const Shape& input_dims, std::size_t num_classes);

// Checkpoint layout (all integers little-endian):
//   "AFMCKPT1"
//   u32 arch_id length, arch_id bytes
//   u32 blob count; per blob: u64 value count, f64 values
//   u32 metadata length, metadata bytes (UTF-8 JSON)
std::vector<std::uint8_t> serialize_checkpoint(const Network& net, const CheckpointMeta& meta);
Network deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, CheckpointMeta* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Network& net, const CheckpointMeta& meta);
Network load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace afm
