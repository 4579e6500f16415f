#include "dhi/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "dhi/error.hpp"

namespace dhi {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<TensorImpl>()) {
  if (values.size() != numel(shape)) {
    throw InvalidArgument("tensor data length " + std::to_string(values.size()) +
                          " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw InvalidArgument("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw InvalidArgument("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double& Tensor::at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) {
  const auto& s = impl_->shape;
  return impl_->data[((n * s[1] + h) * s[2] + w) * s[3] + c];
}

double Tensor::at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const {
  const auto& s = impl_->shape;
  return impl_->data[((n * s[1] + h) * s[2] + w) * s[3] + c];
}

double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  return impl_->grad;
}

std::span<double> Tensor::grad_buffer() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl_->grad);
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

void require_finite(const Tensor& t, std::string_view op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite value produced by " + std::string(op));
    }
  }
}

void Tape::record(std::string_view op, const Tensor& output, BackwardFn fn) {
  entries_.push_back(Entry{std::string(op), output.impl(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw InvalidArgument("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw InvalidArgument("backward() on a loss that is not on the tape");
  }
  auto& seed = loss.impl()->grad;
  seed.assign(1, 0.0);
  seed[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }
  entries_.clear();
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

Tape& active_tape() {
  thread_local Tape tape;
  return tape;
}

void backward(const Tensor& loss) { active_tape().backward(loss); }

NoGradGuard::NoGradGuard() : previous_(active_tape().recording()) {
  active_tape().set_recording(false);
}

NoGradGuard::~NoGradGuard() { active_tape().set_recording(previous_); }

bool grad_needed(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape().recording()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

std::span<double> grad_target(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl || !impl->requires_grad) return {};
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad;
}

}  // namespace dhi
