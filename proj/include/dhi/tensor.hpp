#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dhi {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward reaches this tensor
  bool requires_grad = false;
};

// Shared handle to a dense float64 array. Copies alias the same storage;
// use clone() for a deep copy. Rank-4 tensors are laid out (batch, height, width, channel).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  // Rank-4 element access.
  double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t c);
  double at(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const;

  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const double> grad() const;
  // Allocates a zero gradient buffer on first use.
  std::span<double> grad_buffer();
  void zero_grad();
  Tensor grad_tensor() const;

  Tensor clone() const;
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Throws NumericalError naming `op` when any element of t is NaN or infinite.
void require_finite(const Tensor& t, std::string_view op);

// Ordered record of differentiable ops. Ops executed while recording is
// enabled append one entry whose closure accumulates input gradients from
// the output gradient; backward() replays entries in exact reverse order.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::string_view op, const Tensor& output, BackwardFn fn);
  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure whose output
  // received a gradient. The tape is cleared afterwards.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }

  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const;

  bool recording() const { return recording_; }
  void set_recording(bool flag) { recording_ = flag; }

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool recording_ = true;
};

// The tape ops record onto; one per thread.
Tape& active_tape();

// Runs backward on the active tape.
void backward(const Tensor& loss);

// Suspends recording for its lifetime (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// True when an op over these inputs must be recorded.
bool grad_needed(std::initializer_list<const Tensor*> inputs);

// Gradient accumulation target for an input captured by a backward closure;
// returns an empty span when that input does not require grad.
std::span<double> grad_target(const std::shared_ptr<TensorImpl>& impl);

}  // namespace dhi
