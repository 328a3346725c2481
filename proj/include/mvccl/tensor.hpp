#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared TensorNode. Every primitive op
// allocates a fresh node holding its output, the handles of its inputs and a
// closure that pushes the output gradient back into the inputs. Nodes are
// never mutated after creation except for their grad buffers; only leaves
// (parameters) may have their data rewritten, and only outside a live graph.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mvccl {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }

  /// Grad buffer, zero-allocated on first use.
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  T item() const;
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Accumulated gradient; empty when no backward pass has reached this tensor.
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad();

  /// Writable view of a leaf's data. Throws UsageError on op outputs.
  std::span<T> mutable_data();

  /// Same values, no graph history, requires_grad off.
  Tensor detach() const;

  TensorNode<T>& node() const { return *node_; }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Ordered record of the ops reachable from a root tensor. Construction
/// performs a depth-first topological sort, so every node appears after all
/// of its inputs and exactly once.
template <typename T>
class GradTape {
 public:
  explicit GradTape(const Tensor<T>& root);

  std::span<TensorNode<T>* const> nodes() const { return order_; }
  std::size_t op_count() const;

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward closure once
  /// in reverse order. Leaf grads accumulate across calls; interior grads are
  /// reset at the start of each run.
  void run_backward();

 private:
  std::shared_ptr<TensorNode<T>> root_;
  std::vector<TensorNode<T>*> order_;
};

/// Reverse-mode sweep from a scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

/// While alive on the current thread, ops do not record graph history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

/// Fingerprint of every branch decision (relu sign, max-pool argmax, clamp
/// side) taken by ops executed on this thread while the probe is alive. Two
/// evaluations with equal fingerprints lie on the same smooth piece.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  std::uint64_t fingerprint() const;

  static bool active();
  static void record(std::uint64_t value);

 private:
  bool previous_active_;
  std::uint64_t previous_hash_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace mvccl
