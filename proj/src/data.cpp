// SPDX-License-Identifier: Apache-2.0
#include "afm/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "afm/error.hpp"
#include "afm/serial.hpp"

namespace afm {
namespace {

Dataset parse_cifar_records(const std::vector<std::uint8_t>& bytes, std::size_t label_bytes, std::size_t label_pick,
                            std::size_t num_classes, const std::string& name) {
  const std::size_t record = label_bytes + kCifarRecordPixels;
  if (bytes.size() % record != 0) {
    throw FormatError(name + ": length " + std::to_string(bytes.size()) + " is not a multiple of the " +
                      std::to_string(record) + "-byte record size (expected a multiple of " + std::to_string(record) +
                      ", actual remainder " + std::to_string(bytes.size() % record) + ")");
  }
  const std::size_t n = bytes.size() / record;
  std::vector<double> pixels(n * kCifarRecordPixels);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    const std::uint8_t label = rec[label_pick];
    if (label >= num_classes) {
      throw FormatError(name + ": record " + std::to_string(i) + " has label byte " + std::to_string(label) +
                        " (max " + std::to_string(num_classes - 1) + ")");
    }
    labels[i] = label;
    for (std::size_t p = 0; p < kCifarRecordPixels; ++p) {
      pixels[i * kCifarRecordPixels + p] = static_cast<double>(rec[label_bytes + p]) / 255.0;
    }
  }
  Dataset ds;
  ds.x = Tensor({n, 3, 32, 32}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  ds.name = name;
  return ds;
}

}  // namespace

Shape Dataset::example_dims() const { return Shape(x.shape().begin() + 1, x.shape().end()); }

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t row = x.dim(0) == 0 ? shape_numel(example_dims()) : x.numel() / x.dim(0);
  std::vector<double> out(indices.size() * row);
  const auto src = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw IndexError("dataset index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row, out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  return Tensor(std::move(shape), std::move(out));
}

std::vector<int> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

void Dataset::validate() const {
  if (x.rank() < 2 || x.dim(0) != labels.size()) {
    throw FormatError("dataset '" + name + "': " + std::to_string(labels.size()) + " labels for x of shape " +
                      shape_str(x.shape()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw FormatError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at index " +
                        std::to_string(i) + " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  for (double v : x.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset '" + name + "': value outside [0,1]");
  }
}

Dataset parse_cifar10_bin(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  return parse_cifar_records(bytes, 1, 0, 10, name);
}

Dataset parse_cifar100_bin(const std::vector<std::uint8_t>& bytes, bool fine_labels, const std::string& name) {
  return parse_cifar_records(bytes, 2, fine_labels ? 1 : 0, fine_labels ? 100 : 20, name);
}

std::vector<std::uint8_t> serialize_cifar10_bin(const Dataset& ds) {
  if (ds.x.shape() != Shape{ds.size(), 3, 32, 32}) {
    throw DimensionError("serialize_cifar10_bin: need [N,3,32,32], got " + shape_str(ds.x.shape()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * (1 + kCifarRecordPixels));
  const auto px = ds.x.data();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (std::size_t p = 0; p < kCifarRecordPixels; ++p) {
      out.push_back(static_cast<std::uint8_t>(std::lround(px[i * kCifarRecordPixels + p] * 255.0)));
    }
  }
  return out;
}

Dataset load_cifar10_dir(const std::filesystem::path& dir, bool train) {
  std::vector<std::uint8_t> all;
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  for (const auto& f : files) {
    auto bytes = read_file(dir / f);
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  return parse_cifar10_bin(all, train ? "cifar10-train" : "cifar10-test");
}

Dataset subset(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < per_class) {
      throw ConfigError("subset: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " examples, " + std::to_string(per_class) + " requested");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  std::sort(picked.begin(), picked.end());
  Dataset out;
  out.x = ds.gather(picked);
  out.labels = ds.gather_labels(picked);
  out.num_classes = ds.num_classes;
  out.name = ds.name + "-sub" + std::to_string(per_class);
  return out;
}

Dataset synth_blobs(std::size_t d, std::size_t k, std::size_t n, double margin, std::uint64_t seed, double spread) {
  if (d == 0 || k < 2) throw ConfigError("synth_blobs: need d >= 1 and k >= 2");
  if (k > 2 && k > 2 * d) throw ConfigError("synth_blobs: at most 2*d classes for k > 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::vector<double>> centers(k, std::vector<double>(d, 0.5));
  if (k == 2) {
    std::vector<double> u(d);
    double norm = 0.0;
    for (auto& v : u) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) {
      centers[0][j] += 0.5 * margin * u[j] / norm;
      centers[1][j] -= 0.5 * margin * u[j] / norm;
    }
  } else {
    // Axis-aligned centres; neighbours on distinct axes are `margin` apart.
    const double a = margin / std::sqrt(2.0);
    for (std::size_t c = 0; c < k; ++c) centers[c][c / 2] += (c % 2 == 0 ? a : -a);
  }

  std::vector<double> values(n * d);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < d; ++j) values[i * d + j] = std::clamp(centers[c][j] + spread * gauss(rng), 0.0, 1.0);
  }
  Dataset ds;
  ds.x = Tensor({n, d}, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = k;
  ds.name = "blobs-d" + std::to_string(d) + "-k" + std::to_string(k);
  return ds;
}

Dataset synth_images(std::size_t channels, std::size_t side, std::size_t k, std::size_t n, double noise,
                     std::uint64_t seed) {
  if (channels == 0 || side < 4 || k < 2) throw ConfigError("synth_images: bad dimensions");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.2, 0.8);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr std::size_t kGrid = 4;
  const std::size_t plane = side * side, per_example = channels * plane;

  // Class templates: a coarse random grid, bilinearly upsampled.
  std::vector<std::vector<double>> templates(k, std::vector<double>(per_example));
  for (auto& t : templates) {
    std::vector<double> grid(channels * kGrid * kGrid);
    for (auto& g : grid) g = unit(rng);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double gy = static_cast<double>(y) * (kGrid - 1) / static_cast<double>(side - 1);
          const double gx = static_cast<double>(x) * (kGrid - 1) / static_cast<double>(side - 1);
          const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), kGrid - 2);
          const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), kGrid - 2);
          const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
          const double* g = grid.data() + c * kGrid * kGrid;
          const double top = g[y0 * kGrid + x0] * (1 - fx) + g[y0 * kGrid + x0 + 1] * fx;
          const double bot = g[(y0 + 1) * kGrid + x0] * (1 - fx) + g[(y0 + 1) * kGrid + x0 + 1] * fx;
          t[c * plane + y * side + x] = top * (1 - fy) + bot * fy;
        }
  }
  std::vector<double> values(n * per_example);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    labels[i] = static_cast<int>(c);
    for (std::size_t p = 0; p < per_example; ++p) {
      values[i * per_example + p] = std::clamp(templates[c][p] + noise * gauss(rng), 0.0, 1.0);
    }
  }
  Dataset ds;
  ds.x = Tensor({n, channels, side, side}, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = k;
  ds.name = "images-c" + std::to_string(channels) + "-s" + std::to_string(side) + "-k" + std::to_string(k);
  return ds;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  ByteWriter w;
  w.bytes("AFMDATA1");
  w.string32(ds.name);
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.x.rank()));
  for (auto d : ds.x.shape()) w.u64(d);
  for (int l : ds.labels) w.u32(static_cast<std::uint32_t>(l));
  for (double v : ds.x.data()) w.f64(v);
  return w.take();
}

Dataset parse_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "AFMDATA1");
  r.expect_magic("AFMDATA1");
  Dataset ds;
  ds.name = r.string32();
  ds.num_classes = r.u32();
  const std::size_t rank = r.u32();
  if (rank < 2 || rank > 8) r.fail("unsupported rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  const std::size_t n = shape[0];
  const std::size_t total = shape_numel(shape);
  if (r.remaining() != n * 4 + total * 8) {
    r.fail("payload size mismatch: expected " + std::to_string(n * 4 + total * 8) + " bytes, have " +
           std::to_string(r.remaining()));
  }
  ds.labels.resize(n);
  for (auto& l : ds.labels) l = static_cast<int>(r.u32());
  std::vector<double> values(total);
  for (auto& v : values) v = r.f64();
  ds.x = Tensor(std::move(shape), std::move(values));
  ds.validate();
  return ds;
}

}  // namespace afm
