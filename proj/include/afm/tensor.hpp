// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace afm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool recorded = false;  // produced by an op on some tape

  std::vector<double>& ensure_grad();
};

/// Dense row-major tensor of doubles with shared handle semantics.
///
/// Copies of a Tensor alias the same storage. Values produced by ops are
/// never written to afterwards; the only mutation paths are gradient
/// accumulation during Tape::backward and explicit writes to leaves through
/// mutable_data() (optimizer steps, attack iterates).
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  /// Write access for leaves only; throws UsageError on op outputs.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Accumulated gradient; zeros if no backward pass reached this tensor.
  std::vector<double> grad() const;
  std::span<const double> grad_view() const { return impl_->grad; }
  void zero_grad();

  /// Same values, fresh storage, cut from any tape.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Ops record onto the tape that is active on the calling thread whenever at
/// least one of their inputs requires a gradient. backward() replays the
/// records in exact reverse order and marks the tape consumed.
class Tape {
 public:
  using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  void backward(const Tensor& loss);
  void reset();
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// RAII activation; nests, restoring the previously active tape.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  /// Used by op implementations. Registers `output` as produced by an op
  /// whose backward is `fn`; no-op unless a tape is active and any input
  /// requires grad.
  static void record(std::initializer_list<const Tensor*> inputs,
                     Tensor& output, BackwardFn fn);

  /// Visit order of the most recent backward (node indices), for testing.
  const std::vector<std::size_t>& last_visit_order() const { return visit_order_; }

 private:
  struct Node {
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
  bool consumed_ = false;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

}  // namespace afm
