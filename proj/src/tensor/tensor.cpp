#include "mvccl/tensor.hpp"

#include <unordered_set>

#include "mvccl/errors.hpp"

namespace mvccl {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
}

thread_local bool t_grad_enabled = true;
thread_local bool t_kink_active = false;
thread_local std::uint64_t t_kink_hash = 0;

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) +
                         " data elements");
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf()) {
    throw UsageError(std::string("cannot mutate the output of recorded op '") + node_->op + "'");
  }
  return node_->data;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

template <typename T>
GradTape<T>::GradTape(const Tensor<T>& root) : root_(root.node_ptr()) {
  if (!root_) throw UsageError("GradTape requires a defined root tensor");
  // Iterative post-order DFS; recursion would overflow on long chains.
  std::unordered_set<const TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
  stack.emplace_back(root_.get(), 0);
  visited.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next_input] = stack.back();
    if (next_input < node->inputs.size()) {
      TensorNode<T>* child = node->inputs[next_input++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
std::size_t GradTape<T>::op_count() const {
  std::size_t count = 0;
  for (const auto* node : order_) count += node->is_leaf() ? 0 : 1;
  return count;
}

template <typename T>
void GradTape<T>::run_backward() {
  if (root_->data.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " + to_string(root_->shape));
  }
  if (!root_->requires_grad) return;
  for (auto* node : order_) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
  }
  root_->grad_buffer()[0] += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined tensor");
  if (loss.numel() != 1) throw UsageError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  GradTape<T> tape(loss);
  tape.run_backward();
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

KinkProbe::KinkProbe() : previous_active_(t_kink_active), previous_hash_(t_kink_hash) {
  t_kink_active = true;
  t_kink_hash = 1469598103934665603ULL;
}

KinkProbe::~KinkProbe() {
  t_kink_active = previous_active_;
  t_kink_hash = previous_hash_;
}

std::uint64_t KinkProbe::fingerprint() const { return t_kink_hash; }
bool KinkProbe::active() { return t_kink_active; }

void KinkProbe::record(std::uint64_t value) {
  // FNV-1a over the 8 bytes of value.
  for (int i = 0; i < 8; ++i) {
    t_kink_hash ^= (value >> (8 * i)) & 0xffU;
    t_kink_hash *= 1099511628211ULL;
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace mvccl
