#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cal {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool produced_by_op = false;  // true for tape intermediates
  std::uint64_t id = 0;
};

/// Shared handle to a dense row-major float tensor.
///
/// Copies alias the same storage; use clone() or detach() for a value copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }
  float at(std::size_t flat_index) const { return impl_->data.at(flat_index); }
  float item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const { return impl_->grad; }
  // Handle semantics: the gradient buffer is shared, so this is const.
  std::span<float> mutable_grad() const;
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  /// Value copy that is not connected to any tape.
  Tensor detach() const;
  /// Value copy that keeps the requires_grad flag (a fresh leaf).
  Tensor clone() const;

  /// Value copy with a new shape of equal element count (no tape record).
  Tensor reshaped(Shape shape) const;

  bool is_leaf() const { return !impl_->produced_by_op; }
  bool same_as(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  std::uint64_t id() const { return impl_->id; }

  TensorImpl& impl() const { return *impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_tensor(Shape shape, std::vector<float> data, bool requires_grad);
};

Tensor make_tensor(Shape shape, std::vector<float> data, bool requires_grad);

/// Define-by-run record of differentiable operations.
///
/// Nodes are appended in execution order, so the list is already a
/// topological order; backward walks it in reverse exactly once.
class Tape {
 public:
  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  /// Seeds d(root)/d(root) = 1 and propagates to every tensor on the tape.
  /// Leaf gradients accumulate; intermediate gradients are reset first.
  void backward(const Tensor& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Makes `tape` the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// True when an op over `inputs` must be recorded on the active tape.
bool should_record(std::initializer_list<const Tensor*> inputs);

bool all_finite(std::span<const float> values);

}  // namespace cal
