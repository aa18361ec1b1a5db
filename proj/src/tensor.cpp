#include "condseg/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "condseg/error.hpp"

namespace condseg {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

namespace {
thread_local std::uint64_t tape_counter = 0;
thread_local bool grad_mode = true;
}  // namespace

std::uint64_t next_tape_seq() { return ++tape_counter; }
bool grad_mode_enabled() { return grad_mode; }
void set_grad_mode(bool enabled) { grad_mode = enabled; }

}  // namespace detail

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (flag) {
    impl_->grad.assign(impl_->data.size(), T(0));
  } else {
    impl_->grad.clear();
  }
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, impl_->data);
}

template <typename T>
void BasicTensor<T>::backward() const {
  condseg::backward(*this);
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  using Impl = detail::TensorImpl<T>;
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ValidationError("backward(): loss does not depend on any tensor that requires grad");
  }

  // Collect recorded nodes reachable from the loss. Strong references keep every
  // node alive while the links are released below.
  std::vector<std::shared_ptr<Impl>> tape;
  std::unordered_set<const Impl*> seen;
  std::vector<std::shared_ptr<Impl>> stack{loss.impl()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(node.get()).second) continue;
    for (const auto& p : node->parents) stack.push_back(p);
    if (node->backward_fn) tape.push_back(std::move(node));
  }
  std::sort(tape.begin(), tape.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  loss.impl()->grad[0] += T(1);
  for (auto& node : tape) node->backward_fn(*node);
  for (auto& node : tape) {
    node->backward_fn = nullptr;
    node->parents.clear();
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward<float>(const BasicTensor<float>&);
template void backward<double>(const BasicTensor<double>&);

}  // namespace condseg
