#include "distilforge/tensor.hpp"

#include <cmath>

namespace distilforge {

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  const int64_t n = numel_of(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(n), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.data()) x = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  const int64_t n = numel_of(shape);
  if (n != static_cast<int64_t>(data.size())) {
    throw ShapeError("data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single element, shape is " + shape_str(shape()));
  return impl_->data[0];
}

std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

bool Tensor::all_finite() const {
  for (double v : impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void GradTape::record(Tensor output, std::vector<Tensor> inputs, std::function<void()> backward_fn) {
  nodes_.push_back(Node{std::move(output), std::move(inputs), std::move(backward_fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (used_) throw TapeError("backward already ran on this tape; call reset() first");
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  bool produced_here = false;
  for (const auto& node : nodes_) {
    if (node.output.raw() == loss.raw()) {
      produced_here = true;
      break;
    }
  }
  if (!produced_here) throw TapeError("backward: loss tensor is detached from this tape");

  used_ = true;
  loss.raw()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // nodes whose output never received a gradient are off the loss path
    if (!it->output.raw()->grad.empty()) it->backward_fn();
  }
}

void GradTape::reset() {
  nodes_.clear();
  used_ = false;
}

bool grad_needed(const GradTape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace distilforge
