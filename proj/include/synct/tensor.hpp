#pragma once

// Dense row-major tensors and the operation record used for reverse-mode
// gradient propagation.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synct/error.hpp"

namespace synct {

using Shape = std::vector<std::size_t>;

inline std::size_t num_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// A handle to shared tensor storage. Copies alias the same values; tensors are
// treated as immutable once an operation has produced them. Only parameter
// updates (between training steps) and the gradient accumulator mutate.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->value.assign(num_elements(shape), T(0));
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (values.size() != num_elements(shape)) {
      fail(ErrorCode::kShape, "tensor data length " +
                                  std::to_string(values.size()) +
                                  " does not match shape " +
                                  shape_string(shape));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() const { return node_->value; }
  const T* ptr() const { return node_->value.data(); }

  T item() const {
    if (size() != 1) {
      fail(ErrorCode::kContract,
           "item() on non-scalar tensor " + shape_string(shape()));
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }

  // Zero-initialised on first use.
  std::span<T> grad_accumulator() const {
    if (node_->grad.empty()) node_->grad.assign(size(), T(0));
    return node_->grad;
  }

  void zero_grad() const {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }
  void clear_grad() const { node_->grad.clear(); }

  Tensor detached_copy() const {
    return from(shape(), node_->value, false);
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

// Ordered record of executed operations. Operations are appended as they run,
// so the record is topologically sorted by construction; backward() replays it
// in reverse. A graph constructed with grad disabled records nothing.
template <class T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  bool wants_grad(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!grad_enabled_) return false;
    for (const Tensor<T>* t : inputs) {
      if (t->requires_grad()) return true;
    }
    return false;
  }

  void record(const char* name, Tensor<T> output,
              std::function<void()> backward) {
    output.set_requires_grad(true);
    ops_.push_back(Op{name, std::move(output), std::move(backward)});
  }

  std::size_t size() const { return ops_.size(); }
  const char* op_name(std::size_t i) const { return ops_.at(i).name; }

  // Intermediate gradients are reset on every call; leaf gradients
  // accumulate across calls until the caller clears them.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      fail(ErrorCode::kContract, "backward() requires a scalar loss");
    }
    for (Op& op : ops_) {
      op.output.zero_grad();
    }
    Tensor<T> seed = loss;
    seed.grad_accumulator()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (it->output.has_grad()) it->backward();
    }
  }

 private:
  struct Op {
    const char* name;
    Tensor<T> output;
    std::function<void()> backward;
  };

  bool grad_enabled_;
  std::vector<Op> ops_;
};

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::kNumeric, std::string("non-finite value produced by ") + op);
    }
  }
}

}  // namespace synct
