#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace condseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

/// Storage plus tape linkage. Outputs of differentiable ops keep their inputs alive
/// through `parents` until backward() runs, which then clears the links.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // non-empty iff requires_grad
  bool requires_grad = false;

  std::uint64_t seq = 0;  // execution order on the recording thread
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
};

std::uint64_t next_tape_seq();
bool grad_mode_enabled();
void set_grad_mode(bool enabled);

}  // namespace detail

/// Disables recording of differentiable ops on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled()) { detail::set_grad_mode(false); }
  ~NoGradGuard() { detail::set_grad_mode(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor with shared storage. Copies of a tensor alias the same
/// buffer; use clone() for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value) { return BasicTensor(std::move(shape), value); }
  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }

  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool flag);
  void zero_grad();

  /// Value of a one-element tensor.
  T item() const;

  /// Independent copy of the data, detached from the tape.
  BasicTensor clone() const;

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape());
    auto src = data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
    return out;
  }

  /// Reverse-mode sweep from this scalar; see condseg::backward.
  void backward() const;

  const std::shared_ptr<Impl>& impl() const noexcept { return impl_; }
  static BasicTensor from_impl(std::shared_ptr<Impl> impl) {
    BasicTensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// A trainable tensor registered under a dotted path such as "enc0.conv_a.weight".
template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> tensor;
};

/// Accumulates d(loss)/d(t) into every tensor reachable from `loss` that requires
/// grad. Recorded ops run in exact reverse execution order; the tape links are
/// released afterwards, so a second call on the same graph is an error.
template <typename T>
void backward(const BasicTensor<T>& loss);

}  // namespace condseg
