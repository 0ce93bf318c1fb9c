// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "afm/attack.hpp"
#include "afm/data.hpp"
#include "afm/error.hpp"
#include "afm/trainer.hpp"

using namespace afm;

namespace {

std::vector<std::uint8_t> cifar_record(std::uint8_t label, std::uint8_t fill) {
  std::vector<std::uint8_t> r(1 + kCifarRecordPixels, fill);
  r[0] = label;
  return r;
}

std::string what_of(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_cifar10_bin(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Cifar, SingleRecord) {
  const auto ds = parse_cifar10_bin(cifar_record(5, 0xFF));
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.labels[0], 5);
  EXPECT_EQ(ds.x.shape(), (Shape{1, 3, 32, 32}));
  for (double v : ds.x.data()) EXPECT_EQ(v, 1.0);
}

TEST(Cifar, PlaneOrderIsRgb) {
  auto r = cifar_record(0, 0);
  r[1 + 1024] = 255;  // first green pixel
  const auto ds = parse_cifar10_bin(r);
  EXPECT_EQ(ds.x[1024], 1.0);
  EXPECT_EQ(ds.x[0], 0.0);
}

TEST(Cifar, EmptyInputGivesEmptyDataset) {
  const auto ds = parse_cifar10_bin({});
  EXPECT_EQ(ds.size(), 0u);
}

TEST(Cifar, BadLengthNamesExpectedAndActual) {
  auto bytes = cifar_record(1, 3);
  bytes.pop_back();
  const auto msg = what_of(bytes);
  EXPECT_NE(msg.find("3073"), std::string::npos) << msg;
  EXPECT_NE(msg.find("3072"), std::string::npos) << msg;
}

TEST(Cifar, BadLabelNamesRecordIndex) {
  auto bytes = cifar_record(1, 3);
  const auto second = cifar_record(10, 3);
  bytes.insert(bytes.end(), second.begin(), second.end());
  const auto msg = what_of(bytes);
  EXPECT_NE(msg.find("record 1"), std::string::npos) << msg;
}

TEST(Cifar, Cifar100FineAndCoarse) {
  std::vector<std::uint8_t> r(2 + kCifarRecordPixels, 0);
  r[0] = 7;
  r[1] = 93;
  EXPECT_EQ(parse_cifar100_bin(r, true).labels[0], 93);
  EXPECT_EQ(parse_cifar100_bin(r, false).labels[0], 7);
  EXPECT_EQ(parse_cifar100_bin(r, true).num_classes, 100u);
  r[1] = 100;
  EXPECT_THROW(parse_cifar100_bin(r, true), FormatError);
}

TEST(Cifar, SerializeRoundTrip) {
  std::vector<std::uint8_t> bytes;
  for (int i = 0; i < 3; ++i) {
    auto r = cifar_record(static_cast<std::uint8_t>(i * 3), 0);
    for (std::size_t p = 0; p < kCifarRecordPixels; ++p) r[1 + p] = static_cast<std::uint8_t>((p * 7 + i) % 256);
    bytes.insert(bytes.end(), r.begin(), r.end());
  }
  EXPECT_EQ(serialize_cifar10_bin(parse_cifar10_bin(bytes)), bytes);
}

TEST(AfmData, RoundTripIsBitwise) {
  const auto ds = synth_images(3, 8, 4, 20, 0.1, 3);
  const auto back = parse_dataset(serialize_dataset(ds));
  EXPECT_EQ(back.name, ds.name);
  EXPECT_EQ(back.num_classes, ds.num_classes);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.x.shape(), ds.x.shape());
  for (std::size_t i = 0; i < ds.x.numel(); ++i) EXPECT_EQ(back.x[i], ds.x[i]);
}

TEST(AfmData, TruncationIsFormatError) {
  auto bytes = serialize_dataset(synth_blobs(4, 2, 10, 0.3, 1));
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(parse_dataset(bytes), FormatError);
  EXPECT_THROW(parse_dataset({'A', 'F', 'M'}), FormatError);
}

TEST(Subset, StratifiedAndDeterministic) {
  const auto ds = synth_blobs(4, 4, 400, 0.3, 2);
  const auto a = subset(ds, 25, 9), b = subset(ds, 25, 9), c = subset(ds, 25, 10);
  EXPECT_EQ(a.labels, b.labels);
  for (std::size_t i = 0; i < a.x.numel(); ++i) ASSERT_EQ(a.x[i], b.x[i]);
  EXPECT_EQ(a.size(), 100u);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 25);
  bool differs = false;
  for (std::size_t i = 0; i < a.x.numel() && !differs; ++i) differs = a.x[i] != c.x[i];
  EXPECT_TRUE(differs);
  EXPECT_THROW(subset(ds, 1000, 1), ConfigError);
}

TEST(Blobs, ShapeRangeAndBalance) {
  const auto ds = synth_blobs(10, 2, 300, 0.3, 4);
  EXPECT_EQ(ds.x.shape(), (Shape{300, 10}));
  for (double v : ds.x.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto ones = std::count(ds.labels.begin(), ds.labels.end(), 1);
  EXPECT_NEAR(static_cast<double>(ones), 150.0, 1.0);
  EXPECT_EQ(synth_blobs(10, 2, 0, 0.3, 4).size(), 0u);
  EXPECT_THROW(synth_blobs(10, 1, 10, 0.3, 4), ConfigError);
}

TEST(Blobs, SmallMlpSeparatesThem) {
  // One draw so both splits share class centres.
  const auto all = synth_blobs(10, 2, 768, 0.3, 5);
  std::vector<std::size_t> tr(512), te(256);
  std::iota(tr.begin(), tr.end(), 0);
  std::iota(te.begin(), te.end(), 512);
  const Dataset train_set{all.gather(tr), all.gather_labels(tr), 2, "train"};
  const Dataset test_set{all.gather(te), all.gather_labels(te), 2, "test"};
  train::TrainConfig c;
  c.method = train::Method::kPgdAt;
  c.worst_case = worst_case::Spec::defaults(worst_case::Variant::kAdversarial, 1);
  c.worst_case.eps_train = 1.0 / 255.0;
  c.schedule = {1, 10, 64};
  c.eval_attacks = {};
  const auto r = train::train(nullptr, build_network("mlp:16", {10}, 2, 1), train_set, test_set, c);
  EXPECT_GT(r.history.back().clean_acc, 0.95);
}

TEST(Images, ShapeAndRange) {
  const auto ds = synth_images(3, 8, 10, 50, 0.1, 1);
  EXPECT_EQ(ds.x.shape(), (Shape{50, 3, 8, 8}));
  EXPECT_EQ(ds.num_classes, 10u);
  for (double v : ds.x.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NO_THROW(ds.validate());
}
