#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "distilforge/errors.hpp"

namespace distilforge {

int64_t numel_of(const std::vector<int>& shape);  // validates dims are positive
std::string shape_str(const std::vector<int>& shape);

// Dense row-major f64 storage. Tensor handles share the impl; values are
// treated as immutable once an op has produced them.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value);  // shape {1}

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  double item() const;

  // Handles are shallow-const: a const Tensor still shares mutable storage,
  // matching the value-semantics-over-shared-impl idiom used throughout.
  std::vector<double>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) const { impl_->requires_grad = v; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Allocates a zero-filled gradient on first use.
  std::vector<double>& grad() const;
  void clear_grad() const { impl_->grad.clear(); }

  bool all_finite() const;

  TensorImpl* raw() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops append nodes in execution order, so inputs of any
// node were recorded before it; backward() replays the nodes once in reverse.
// A tape is single-threaded; independent runs use independent tapes.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(Tensor output, std::vector<Tensor> inputs, std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and propagates to every tensor on the path.
  // Throws ShapeError for a non-scalar loss, TapeError if the loss was not
  // produced under this tape or if backward already ran without reset().
  void backward(const Tensor& loss);

  void reset();
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return used_; }

 private:
  struct Node {
    Tensor output;
    std::vector<Tensor> inputs;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  bool used_ = false;
};

inline void backward(const Tensor& loss, GradTape& tape) { tape.backward(loss); }

// True when an op called with these inputs should record onto the tape.
bool grad_needed(const GradTape* tape, std::initializer_list<const Tensor*> inputs);

}  // namespace distilforge
