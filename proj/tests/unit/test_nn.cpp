// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "afm/error.hpp"
#include "afm/nn.hpp"
#include "afm/ops.hpp"
#include "afm/serial.hpp"

using namespace afm;

namespace {

Tensor rand01(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(s), std::move(v));
}

}  // namespace

TEST(Network, MlpParamCountClosedForm) {
  EXPECT_EQ(build_network("mlp", {10}, 2, 0).param_count(), 10u * 32 + 32 + 32 * 2 + 2);
  EXPECT_EQ(arch_param_count("mlp", {10}, 2), 418u);
  EXPECT_EQ(arch_param_count("mlp:7", {5}, 3), 5u * 7 + 7 + 7 * 3 + 3);
  EXPECT_EQ(arch_param_count("mlp2:4", {3}, 2), 3u * 4 + 4 + 4 * 4 + 4 + 4 * 2 + 2);
  // conv 3->8 (3x3) + bias, pool halves 8x8 to 4x4, dense 8*16 -> 10.
  EXPECT_EQ(arch_param_count("cnn-tiny", {3, 8, 8}, 10), 8u * 3 * 9 + 8 + 8 * 16 * 10 + 10);
  for (const auto* arch : {"mlp", "mlp2", "cnn-tiny", "cnn-small"}) {
    const Shape dims = std::string(arch).starts_with("cnn") ? Shape{3, 8, 8} : Shape{12};
    EXPECT_EQ(build_network(arch, dims, 4, 1).param_count(), arch_param_count(arch, dims, 4)) << arch;
  }
}

TEST(Network, SameSeedSameParameters) {
  const auto a = build_network("cnn-small", {3, 8, 8}, 10, 42).flat_params();
  const auto b = build_network("cnn-small", {3, 8, 8}, 10, 42).flat_params();
  const auto c = build_network("cnn-small", {3, 8, 8}, 10, 43).flat_params();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Network, KaimingUniformBoundsAndZeroBias) {
  const auto net = build_network("mlp:64", {20}, 3, 5);
  const double bound = std::sqrt(6.0 / 20.0);
  for (double w : net.params()[0].data()) EXPECT_LE(std::abs(w), bound);
  for (double b : net.params()[1].data()) EXPECT_EQ(b, 0.0);
}

TEST(Network, ZeroWeightsGiveUniformSoftmax) {
  auto net = build_network("mlp", {10}, 4, 0);
  for (auto& p : net.params()) std::fill(p.mutable_data().begin(), p.mutable_data().end(), 0.0);
  const auto probs = ops::softmax(net.forward(Tensor::zeros({2, 10})), 1);
  for (double v : probs.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Network, OutputShapeAndInputCheck) {
  const auto net = build_network("cnn-tiny", {3, 8, 8}, 10, 1);
  EXPECT_EQ(net.forward(rand01({5, 3, 8, 8}, 1)).shape(), (Shape{5, 10}));
  EXPECT_THROW(net.forward(rand01({5, 3, 4, 4}, 1)), DimensionError);
  EXPECT_THROW(build_network("resnet", {3, 8, 8}, 10, 0), ConfigError);
}

TEST(Network, LogitsFiniteOnFuzzedInputs) {
  const auto net = build_network("cnn-small", {3, 8, 8}, 10, 3);
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (double v : net.forward(rand01({4, 3, 8, 8}, s)).data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Network, InputOnlyModeLeavesParamsUntouched) {
  const auto net = build_network("mlp:8", {4}, 3, 2);
  Tensor x = rand01({3, 4}, 2).set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  tape.backward(ops::sum(net.forward(x, GradMode::kInputOnly)));
  EXPECT_TRUE(x.has_grad());
  for (const auto& p : net.params()) EXPECT_FALSE(p.has_grad());
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto net = build_network("cnn-tiny", {3, 8, 8}, 10, 9);
  const CheckpointMeta meta{{3, 8, 8}, 10, 7, 9, "abc123"};
  CheckpointMeta back;
  const auto loaded = deserialize_checkpoint(serialize_checkpoint(net, meta), &back);
  EXPECT_EQ(loaded.arch_id(), "cnn-tiny");
  EXPECT_EQ(back.epochs, 7);
  EXPECT_EQ(back.seed, 9u);
  EXPECT_EQ(back.config_hash, "abc123");
  const auto x = rand01({2, 3, 8, 8}, 4);
  const auto a = net.forward(x), b = loaded.forward(x);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);

  const auto path = std::filesystem::temp_directory_path() / "afm_ckpt_test.ckpt";
  save_checkpoint(path, net, meta);
  EXPECT_EQ(load_checkpoint(path).flat_params(), net.flat_params());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptInputReportsOffset) {
  const auto net = build_network("mlp:4", {3}, 2, 1);
  auto bytes = serialize_checkpoint(net, {{3}, 2, 0, 1, ""});
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  try {
    deserialize_checkpoint(truncated);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}
