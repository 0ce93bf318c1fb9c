// SPDX-License-Identifier: Apache-2.0
#include "afm/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>

#include "afm/error.hpp"
#include "afm/ops.hpp"
#include "afm/serial.hpp"
#include "json.hpp"

namespace afm {
namespace {

struct ArchName {
  std::string base;
  std::size_t hidden = 32;
};

ArchName split_arch(const std::string& arch_id) {
  ArchName a;
  const auto colon = arch_id.find(':');
  a.base = arch_id.substr(0, colon);
  if (colon != std::string::npos) {
    const std::string width = arch_id.substr(colon + 1);
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(width, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != width.size() || v <= 0) throw ConfigError("bad hidden width in arch id '" + arch_id + "'");
    a.hidden = static_cast<std::size_t>(v);
  }
  return a;
}

// Layer plan plus parameter shapes, shared by build and param counting.
struct Plan {
  std::vector<LayerDesc> layers;
  std::vector<Shape> param_shapes;
};

Plan plan_arch(const std::string& arch_id, const Shape& input_dims, std::size_t num_classes) {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (input_dims.empty()) throw ConfigError("input_dims must be non-empty");
  const ArchName name = split_arch(arch_id);
  Plan plan;
  auto dense = [&](std::size_t in, std::size_t out) {
    plan.layers.push_back({LayerKind::kDense, in, out, 0, 1, 0, plan.param_shapes.size()});
    plan.param_shapes.push_back({out, in});
    plan.param_shapes.push_back({out});
  };
  auto conv = [&](std::size_t in, std::size_t out) {
    plan.layers.push_back({LayerKind::kConv2d, in, out, 3, 1, 1, plan.param_shapes.size()});
    plan.param_shapes.push_back({out, in, 3, 3});
    plan.param_shapes.push_back({out});
  };
  auto simple = [&](LayerKind k, std::size_t window = 0) {
    plan.layers.push_back({k, 0, 0, window, 1, 0, 0});
  };
  const std::size_t features = shape_numel(input_dims);

  if (name.base == "mlp" || name.base == "mlp2") {
    simple(LayerKind::kFlatten);
    dense(features, name.hidden);
    simple(LayerKind::kRelu);
    if (name.base == "mlp2") {
      dense(name.hidden, name.hidden);
      simple(LayerKind::kRelu);
    }
    dense(name.hidden, num_classes);
    return plan;
  }
  if (name.base == "cnn-tiny" || name.base == "cnn-small") {
    if (arch_id != name.base) throw ConfigError("arch '" + name.base + "' takes no width suffix");
    if (input_dims.size() != 3) {
      throw ConfigError("arch '" + arch_id + "' needs [C,H,W] inputs, got " + shape_str(input_dims));
    }
    const std::size_t c = input_dims[0], h = input_dims[1], w = input_dims[2];
    const std::size_t pools = name.base == "cnn-tiny" ? 1 : 2;
    const std::size_t div = std::size_t{1} << pools;
    if (h % div != 0 || w % div != 0 || h == 0 || w == 0) {
      throw ConfigError("arch '" + arch_id + "' needs H and W divisible by " + std::to_string(div));
    }
    if (pools == 1) {
      conv(c, 8);
      simple(LayerKind::kRelu);
      simple(LayerKind::kAvgPool, 2);
      simple(LayerKind::kFlatten);
      dense(8 * (h / 2) * (w / 2), num_classes);
    } else {
      conv(c, 16);
      simple(LayerKind::kRelu);
      simple(LayerKind::kAvgPool, 2);
      conv(16, 32);
      simple(LayerKind::kRelu);
      simple(LayerKind::kAvgPool, 2);
      simple(LayerKind::kFlatten);
      dense(32 * (h / 4) * (w / 4), num_classes);
    }
    return plan;
  }
  throw ConfigError("unknown arch id '" + arch_id + "'");
}

}  // namespace

std::size_t arch_param_count(const std::string& arch_id, const Shape& input_dims, std::size_t num_classes) {
  std::size_t total = 0;
  for (const auto& s : plan_arch(arch_id, input_dims, num_classes).param_shapes) total += shape_numel(s);
  return total;
}

Network build_network(const std::string& arch_id, const Shape& input_dims, std::size_t num_classes,
                      std::uint64_t seed) {
  Plan plan = plan_arch(arch_id, input_dims, num_classes);
  Network net;
  net.arch_id_ = arch_id;
  net.input_dims_ = input_dims;
  net.num_classes_ = num_classes;
  net.layers_ = std::move(plan.layers);

  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < plan.param_shapes.size(); ++i) {
    const Shape& s = plan.param_shapes[i];
    std::vector<double> values(shape_numel(s), 0.0);
    if (s.size() > 1) {
      const std::size_t fan_in = shape_numel(s) / s[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : values) v = dist(rng);
    }
    net.params_.emplace_back(s, std::move(values), true);
  }
  return net;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

Tensor Network::forward(const Tensor& x, GradMode mode) const {
  if (x.rank() != input_dims_.size() + 1 || !std::equal(input_dims_.begin(), input_dims_.end(), x.shape().begin() + 1)) {
    throw DimensionError("network '" + arch_id_ + "' expects [N," + shape_str(input_dims_).substr(1) + " input, got " +
                         shape_str(x.shape()));
  }
  std::optional<NoGradGuard> no_grad;
  if (mode == GradMode::kNone) no_grad.emplace();

  auto param = [&](std::size_t i) { return mode == GradMode::kFull ? params_[i] : params_[i].detach(); };

  Tensor h = x;
  for (const auto& layer : layers_) {
    switch (layer.kind) {
      case LayerKind::kDense:
        h = ops::linear(h, param(layer.param_index), param(layer.param_index + 1));
        break;
      case LayerKind::kConv2d:
        h = ops::add_channel_bias(ops::conv2d(h, param(layer.param_index), layer.stride, layer.padding),
                                  param(layer.param_index + 1));
        break;
      case LayerKind::kRelu:
        h = ops::relu(h);
        break;
      case LayerKind::kFlatten:
        h = ops::flatten(h);
        break;
      case LayerKind::kAvgPool:
        h = ops::avgpool2d(h, layer.kernel);
        break;
    }
  }
  return h;
}

void Network::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Network Network::clone() const {
  Network copy = *this;
  for (auto& p : copy.params_) p = p.detach().set_requires_grad(true);
  return copy;
}

std::vector<double> Network::flat_params() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for (const auto& p : params_) flat.insert(flat.end(), p.data().begin(), p.data().end());
  return flat;
}

std::vector<std::uint8_t> serialize_checkpoint(const Network& net, const CheckpointMeta& meta) {
  ByteWriter w;
  w.bytes("AFMCKPT1");
  w.string32(net.arch_id());
  w.u32(static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) {
    w.u64(p.numel());
    for (double v : p.data()) w.f64(v);
  }
  nlohmann::json j;
  j["input_dims"] = meta.input_dims.empty() ? net.input_dims() : meta.input_dims;
  j["num_classes"] = meta.num_classes == 0 ? net.num_classes() : meta.num_classes;
  j["epochs"] = meta.epochs;
  j["seed"] = meta.seed;
  j["config_hash"] = meta.config_hash;
  w.string32(j.dump());
  return w.take();
}

Network deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, CheckpointMeta* meta_out) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("AFMCKPT1");
  const std::string arch = r.string32();
  const std::size_t blob_count = r.u32();
  std::vector<std::vector<double>> blobs;
  std::vector<std::size_t> blob_offsets;
  for (std::size_t b = 0; b < blob_count; ++b) {
    blob_offsets.push_back(r.offset());
    const std::uint64_t n = r.u64();
    if (n > r.remaining() / 8) r.fail("blob " + std::to_string(b) + " claims " + std::to_string(n) + " values");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    blobs.push_back(std::move(values));
  }
  const std::size_t meta_offset = r.offset();
  const std::string meta_text = r.string32();
  if (r.remaining() != 0) r.fail("trailing bytes after metadata");

  CheckpointMeta meta;
  try {
    const auto j = nlohmann::json::parse(meta_text);
    meta.input_dims = j.at("input_dims").get<Shape>();
    meta.num_classes = j.at("num_classes").get<std::size_t>();
    meta.epochs = j.value("epochs", 0);
    meta.seed = j.value("seed", std::uint64_t{0});
    meta.config_hash = j.value("config_hash", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad metadata at byte offset " + std::to_string(meta_offset) + ": " + e.what());
  }

  Network net;
  try {
    net = build_network(arch, meta.input_dims, meta.num_classes, 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (net.params().size() != blobs.size()) {
    throw FormatError("checkpoint: arch '" + arch + "' needs " + std::to_string(net.params().size()) +
                      " blobs, file has " + std::to_string(blobs.size()));
  }
  for (std::size_t b = 0; b < blobs.size(); ++b) {
    auto dst = net.params()[b].mutable_data();
    if (dst.size() != blobs[b].size()) {
      throw FormatError("checkpoint: blob " + std::to_string(b) + " at byte offset " +
                        std::to_string(blob_offsets[b]) + " has " + std::to_string(blobs[b].size()) +
                        " values, expected " + std::to_string(dst.size()));
    }
    std::copy(blobs[b].begin(), blobs[b].end(), dst.begin());
  }
  if (meta_out) *meta_out = meta;
  return net;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const CheckpointMeta& meta) {
  write_file(path, serialize_checkpoint(net, meta));
}

Network load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  return deserialize_checkpoint(read_file(path), meta);
}

}  // namespace afm
