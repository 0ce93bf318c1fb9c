// SPDX-License-Identifier: Apache-2.0
#include "afm/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "afm/error.hpp"

namespace afm {
namespace {

thread_local Tape* g_active_tape = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->data.assign(1, 0.0); }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(i) + " out of range for shape " + shape_str(impl_->shape));
  }
  return impl_->shape[i];
}

std::span<double> Tensor::mutable_data() {
  if (impl_->recorded) throw UsageError("cannot write into a tensor produced by a recorded op");
  return impl_->data;
}

double Tensor::item() const {
  if (impl_->data.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tape::~Tape() {
  if (g_active_tape == this) g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) {
  if (tape.consumed_) throw UsageError("cannot record onto a consumed tape; call reset() first");
  g_active_tape = &tape;
}

Tape::Scope::~Scope() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

void Tape::record(std::initializer_list<const Tensor*> inputs, Tensor& output, BackwardFn fn) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor* t) { return t->requires_grad(); });
  if (!any) return;
  output.impl()->requires_grad = true;
  output.impl()->recorded = true;
  tape->nodes_.push_back(Node{output.impl(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (loss.numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto it = std::find_if(nodes_.rbegin(), nodes_.rend(),
                               [&](const Node& n) { return n.output == loss.impl(); });
  if (it == nodes_.rend()) throw UsageError("loss was not recorded on this tape");

  loss.impl()->ensure_grad()[0] = 1.0;
  visit_order_.clear();
  visit_order_.reserve(nodes_.size());
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    visit_order_.push_back(i);
    Node& node = nodes_[i];
    if (node.output->grad.empty()) continue;  // unreachable from loss
    node.backward(node.output->grad);
  }
  consumed_ = true;
  nodes_.clear();
}

void Tape::reset() {
  nodes_.clear();
  visit_order_.clear();
  consumed_ = false;
}

}  // namespace afm
