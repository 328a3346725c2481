#pragma once

// Differentiable primitives. All functions are defined for float and double.
// Binary elementwise ops broadcast when one operand's shape is a trailing
// suffix of the other's (a bias row, a scalar). Outputs containing NaN/Inf
// raise NumericalError naming the op.

#include <cstddef>
#include <vector>

#include "mvccl/tensor.hpp"

namespace mvccl {

enum class PoolMode { max, avg };

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

/// input C_in×H×W, kernels C_out×C_in×k×k, optional bias [C_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride, std::size_t padding);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

/// C×H×W -> H×W×C.
template <typename T>
Tensor<T> chw_to_hwc(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Channel-wise reduction over every position of a [..., D] tensor. Max
/// routes its gradient to the lowest flat index among tied maxima.
template <typename T>
Tensor<T> pool_global(const Tensor<T>& x, PoolMode mode);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
/// Gradient is zero wherever the input lies outside [lo, hi].
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// Euclidean norm of all elements; gradient x/||x||, zero at the origin.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Concatenate along the last axis; all other extents must agree.
template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts);
/// Concatenate along the first axis; all other extents must agree.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

/// Columns [begin, end) of the last axis.
template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t begin, std::size_t end);
/// Rows [begin, end) of the first axis.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

}  // namespace mvccl
