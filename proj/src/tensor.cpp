#include "cal/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace cal {

namespace {

std::atomic<std::uint64_t> next_tensor_id{1};
thread_local Tape* current_tape = nullptr;

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
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->id = next_tensor_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return make_tensor({1}, {value}, requires_grad);
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

std::span<float> Tensor::mutable_grad() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

Tensor Tensor::detach() const { return make_tensor(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const { return make_tensor(impl_->shape, impl_->data, impl_->requires_grad); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  return make_tensor(std::move(shape), impl_->data, false);
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void()> backward) {
  output.impl().produced_by_op = true;
  output.impl().requires_grad = true;
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ShapeError("backward requires a scalar root, got " +
                     (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  bool on_tape = false;
  for (const auto& node : nodes_) {
    if (node.output.same_as(root)) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw std::logic_error("backward root was not produced on this tape");

  for (auto& node : nodes_) {
    node.output.impl().grad.assign(node.output.numel(), 0.0f);
    for (auto& in : node.inputs) {
      if (in.requires_grad() && in.is_leaf()) in.mutable_grad();
    }
  }
  root.impl().grad[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

Tape* active_tape() noexcept { return current_tape; }

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (current_tape == nullptr) return false;
  for (const auto* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace cal
