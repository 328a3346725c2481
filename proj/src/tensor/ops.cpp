#include "mvccl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "kernels.hpp"
#include "mvccl/errors.hpp"

namespace mvccl {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
using BackwardFn = std::function<void(TensorNode<T>&)>;

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs,
                      BackwardFn<T> backward_fn) {
  for (const T v : data) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool any_grad = false;
  for (const auto& in : inputs) any_grad = any_grad || in->requires_grad;
  if (any_grad && NoGradGuard::grad_enabled()) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename T>
Shape broadcast_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() == 1 && b.numel() >= 1 && a.rank() <= b.rank()) return b.shape();
  if (b.numel() == 1 && b.rank() <= a.rank()) return a.shape();
  if (is_suffix(b.shape(), a.shape())) return a.shape();
  if (is_suffix(a.shape(), b.shape())) return b.shape();
  throw DimensionError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

// Shared driver for binary elementwise ops. fwd(x, y) gives the value;
// grad(x, y, out) returns {d/dx, d/dy}.
template <typename T, typename Fwd, typename Grad>
Tensor<T> binary_op(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Grad grad) {
  Shape shape = broadcast_shape(op, a, b);
  const std::size_t n = shape_numel(shape);
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i % na], bd[i % nb]);
  return make_result<T>(op, std::move(shape), std::move(out), {a.node_ptr(), b.node_ptr()},
                        [na, nb, grad](TensorNode<T>& node) {
                          auto& x = *node.inputs[0];
                          auto& y = *node.inputs[1];
                          T* gx = x.requires_grad ? x.grad_buffer().data() : nullptr;
                          T* gy = y.requires_grad ? y.grad_buffer().data() : nullptr;
                          for (std::size_t i = 0; i < node.data.size(); ++i) {
                            const auto [dx, dy] = grad(x.data[i % na], y.data[i % nb], node.data[i]);
                            if (gx) gx[i % na] += node.grad[i] * dx;
                            if (gy) gy[i % nb] += node.grad[i] * dy;
                          }
                        });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary_op(const char* op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x.node_ptr()}, [deriv](TensorNode<T>& node) {
    auto& in = *node.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < node.data.size(); ++i) g[i] += node.grad[i] * deriv(in.data[i], node.data[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  std::vector<T> c(m * n, T(0));
  kernels::gemm_acc(m, k, n, a.data().data(), b.data().data(), c.data());
  return make_result<T>("matmul", {m, n}, std::move(c), {a.node_ptr(), b.node_ptr()},
                        [m, k, n](TensorNode<T>& node) {
                          auto& lhs = *node.inputs[0];
                          auto& rhs = *node.inputs[1];
                          if (lhs.requires_grad) {
                            kernels::gemm_nt_acc(m, n, k, node.grad.data(), rhs.data.data(),
                                                 lhs.grad_buffer().data());
                          }
                          if (rhs.requires_grad) {
                            kernels::gemm_tn_acc(m, k, n, lhs.data.data(), node.grad.data(),
                                                 rhs.grad_buffer().data());
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xd = x.data();
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = xd[r * cols + c];
  }
  return make_result<T>("transpose", {cols, rows}, std::move(out), {x.node_ptr()},
                        [rows, cols](TensorNode<T>& node) {
                          auto& g = node.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += node.grad[c * rows + r];
                          }
                        });
}

namespace {

struct ConvGeometry {
  std::size_t in_channels, height, width;
  std::size_t out_channels, kernel;
  std::size_t stride, padding;
  std::size_t out_height, out_width;

  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t positions() const { return out_height * out_width; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride, std::size_t padding) {
  if (input.rank() != 3 || kernels.rank() != 4) {
    throw DimensionError("conv2d expects C×H×W input and C_out×C_in×k×k kernels, got " + to_string(input.shape()) +
                         " and " + to_string(kernels.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d stride must be >= 1");
  ConvGeometry g{};
  g.in_channels = input.dim(0);
  g.height = input.dim(1);
  g.width = input.dim(2);
  g.out_channels = kernels.dim(0);
  g.kernel = kernels.dim(2);
  g.stride = stride;
  g.padding = padding;
  if (kernels.dim(1) != g.in_channels || kernels.dim(3) != g.kernel) {
    throw DimensionError("conv2d: kernels " + to_string(kernels.shape()) + " incompatible with input " +
                         to_string(input.shape()));
  }
  if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel) {
    throw DimensionError("conv2d: kernel " + to_string(kernels.shape()) + " larger than padded input " +
                         to_string(input.shape()) + " (padding " + std::to_string(padding) + ")");
  }
  g.out_height = (g.height + 2 * padding - g.kernel) / stride + 1;
  g.out_width = (g.width + 2 * padding - g.kernel) / stride + 1;
  return g;
}

// cols[(c·k + ky)·k + kx][oy·W' + ox] = input[c][oy·s + ky - p][ox·s + kx - p]
template <typename T>
std::vector<T> im2col(const ConvGeometry& g, const T* input) {
  std::vector<T> cols(g.patch() * g.positions(), T(0));
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        T* dst = cols.data() + row * g.positions();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          const T* src = input + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[oy * g.out_width + ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

template <typename T>
void col2im_acc(const ConvGeometry& g, const T* cols, T* input_grad) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const T* src = cols + row * g.positions();
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = input_grad + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            dst[ix] += src[oy * g.out_width + ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>* bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, kernels, stride, padding);
  if (bias && (bias->rank() != 1 || bias->dim(0) != g.out_channels)) {
    throw DimensionError("conv2d: bias " + to_string(bias->shape()) + " does not match " +
                         std::to_string(g.out_channels) + " output channels");
  }
  auto cols = std::make_shared<std::vector<T>>(im2col(g, input.data().data()));
  std::vector<T> out(g.out_channels * g.positions(), T(0));
  kernels::gemm_acc(g.out_channels, g.patch(), g.positions(), kernels.data().data(), cols->data(), out.data());
  std::vector<NodePtr<T>> inputs{input.node_ptr(), kernels.node_ptr()};
  if (bias) {
    const auto bd = bias->data();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      T* row = out.data() + o * g.positions();
      for (std::size_t s = 0; s < g.positions(); ++s) row[s] += bd[o];
    }
    inputs.push_back(bias->node_ptr());
  }
  return make_result<T>(
      "conv2d", {g.out_channels, g.out_height, g.out_width}, std::move(out), std::move(inputs),
      [g, cols](TensorNode<T>& node) {
        auto& in = *node.inputs[0];
        auto& ker = *node.inputs[1];
        const T* grad_out = node.grad.data();
        if (ker.requires_grad) {
          kernels::gemm_nt_acc(g.out_channels, g.positions(), g.patch(), grad_out, cols->data(),
                               ker.grad_buffer().data());
        }
        if (in.requires_grad) {
          std::vector<T> grad_cols(g.patch() * g.positions(), T(0));
          kernels::gemm_tn_acc(g.out_channels, g.patch(), g.positions(), ker.data.data(), grad_out, grad_cols.data());
          col2im_acc(g, grad_cols.data(), in.grad_buffer().data());
        }
        if (node.inputs.size() > 2 && node.inputs[2]->requires_grad) {
          auto& gb = node.inputs[2]->grad_buffer();
          for (std::size_t o = 0; o < g.out_channels; ++o) {
            const T* row = grad_out + o * g.positions();
            T acc = T(0);
            for (std::size_t s = 0; s < g.positions(); ++s) acc += row[s];
            gb[o] += acc;
          }
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride, std::size_t padding) {
  return conv2d_impl<T>(input, kernels, nullptr, stride, padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  return conv2d_impl<T>(input, kernels, &bias, stride, padding);
}

template <typename T>
Tensor<T> chw_to_hwc(const Tensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("chw_to_hwc expects rank 3, got " + to_string(x.shape()));
  const std::size_t c = x.dim(0);
  const std::size_t hw = x.dim(1) * x.dim(2);
  const auto xd = x.data();
  std::vector<T> out(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = xd[ch * hw + p];
  }
  return make_result<T>("chw_to_hwc", {x.dim(1), x.dim(2), c}, std::move(out), {x.node_ptr()},
                        [c, hw](TensorNode<T>& node) {
                          auto& g = node.inputs[0]->grad_buffer();
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            for (std::size_t p = 0; p < hw; ++p) g[ch * hw + p] += node.grad[p * c + ch];
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x.node_ptr()}, [](TensorNode<T>& node) {
    auto& g = node.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("softmax_rows expects a matrix, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const auto xd = x.data();
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * cols;
    T* o = out.data() + r * cols;
    const T row_max = *std::max_element(in, in + cols);
    T total = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - row_max);
      total += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return make_result<T>("softmax_rows", x.shape(), std::move(out), {x.node_ptr()},
                        [rows, cols](TensorNode<T>& node) {
                          auto& g = node.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = node.data.data() + r * cols;
                            const T* dy = node.grad.data() + r * cols;
                            T dot = T(0);
                            for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
                            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
                          }
                        });
}

template <typename T>
Tensor<T> pool_global(const Tensor<T>& x, PoolMode mode) {
  if (x.rank() < 2) throw DimensionError("pool_global expects [..., D], got " + to_string(x.shape()));
  const std::size_t channels = x.shape().back();
  const std::size_t positions = x.numel() / channels;
  const auto xd = x.data();
  std::vector<T> out(channels);
  if (mode == PoolMode::avg) {
    for (std::size_t d = 0; d < channels; ++d) {
      T acc = T(0);
      for (std::size_t p = 0; p < positions; ++p) acc += xd[p * channels + d];
      out[d] = acc / static_cast<T>(positions);
    }
    return make_result<T>("pool_avg", {channels}, std::move(out), {x.node_ptr()},
                          [channels, positions](TensorNode<T>& node) {
                            auto& g = node.inputs[0]->grad_buffer();
                            const T inv = T(1) / static_cast<T>(positions);
                            for (std::size_t p = 0; p < positions; ++p) {
                              for (std::size_t d = 0; d < channels; ++d) g[p * channels + d] += node.grad[d] * inv;
                            }
                          });
  }
  std::vector<std::size_t> argmax(channels, 0);
  for (std::size_t d = 0; d < channels; ++d) {
    T best = xd[d];
    for (std::size_t p = 1; p < positions; ++p) {
      if (xd[p * channels + d] > best) {
        best = xd[p * channels + d];
        argmax[d] = p;
      }
    }
    out[d] = best;
    if (KinkProbe::active()) KinkProbe::record(argmax[d]);
  }
  return make_result<T>("pool_max", {channels}, std::move(out), {x.node_ptr()},
                        [channels, argmax = std::move(argmax)](TensorNode<T>& node) {
                          auto& g = node.inputs[0]->grad_buffer();
                          for (std::size_t d = 0; d < channels; ++d) g[argmax[d] * channels + d] += node.grad[d];
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y, T) { return std::pair<T, T>{y, x}; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T out) { return std::pair<T, T>{T(1) / y, -out / y}; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary_op<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary_op<T>(
      "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  if (KinkProbe::active()) {
    std::uint64_t word = 0;
    std::size_t bit = 0;
    for (const T v : x.data()) {
      word = (word << 1) | (v > T(0) ? 1U : 0U);
      if (++bit == 64) {
        KinkProbe::record(word);
        word = 0;
        bit = 0;
      }
    }
    KinkProbe::record(word);
  }
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (const T v : x.data()) {
    if (!(v > T(0))) throw NumericalError("log of non-positive value");
  }
  return unary_op<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (KinkProbe::active()) {
    for (const T v : x.data()) KinkProbe::record(v < lo ? 0U : (v > hi ? 2U : 1U));
  }
  return unary_op<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1); });
}

template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v * v;
  return make_result<T>("l2_norm", {}, {std::sqrt(acc)}, {x.node_ptr()}, [](TensorNode<T>& node) {
    const T norm = node.data[0];
    if (norm == T(0)) return;
    auto& in = *node.inputs[0];
    auto& g = in.grad_buffer();
    const T factor = node.grad[0] / norm;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * in.data[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  return make_result<T>("sum", {}, {acc}, {x.node_ptr()}, [](TensorNode<T>& node) {
    auto& g = node.inputs[0]->grad_buffer();
    for (auto& v : g) v += node.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_lastdim of zero tensors");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_lastdim of scalars");
  const std::size_t rows = parts.front().numel() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw DimensionError("concat_lastdim: " + to_string(s) + " does not match " + to_string(first) +
                           " on leading axes");
    }
    widths.push_back(s.back());
    total += s.back();
  }
  std::vector<T> out(rows * total);
  std::vector<NodePtr<T>> inputs;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
    inputs.push_back(parts[k].node_ptr());
  }
  Shape shape = first;
  shape.back() = total;
  return make_result<T>("concat_lastdim", std::move(shape), std::move(out), std::move(inputs),
                        [rows, total, widths](TensorNode<T>& node) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            auto& in = *node.inputs[k];
                            if (in.requires_grad) {
                              auto& g = in.grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < widths[k]; ++c) {
                                  g[r * widths[k] + c] += node.grad[r * total + off + c];
                                }
                              }
                            }
                            off += widths[k];
                          }
                        });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of zero tensors");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_rows of scalars");
  std::vector<T> out;
  std::vector<NodePtr<T>> inputs;
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat_rows: " + to_string(s) + " does not match " + to_string(first) +
                           " on trailing axes");
    }
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(p.node_ptr());
    sizes.push_back(p.numel());
    rows += s[0];
  }
  Shape shape = first;
  shape[0] = rows;
  return make_result<T>("concat_rows", std::move(shape), std::move(out), std::move(inputs),
                        [sizes](TensorNode<T>& node) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < sizes.size(); ++k) {
                            auto& in = *node.inputs[k];
                            if (in.requires_grad) {
                              auto& g = in.grad_buffer();
                              for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += node.grad[off + i];
                            }
                            off += sizes[k];
                          }
                        });
}

template <typename T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.shape().back()) {
    throw DimensionError("slice_lastdim [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         to_string(x.shape()));
  }
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  const std::size_t out_width = end - begin;
  const auto xd = x.data();
  std::vector<T> out(rows * out_width);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xd.data() + r * width + begin, out_width, out.data() + r * out_width);
  Shape shape = x.shape();
  shape.back() = out_width;
  return make_result<T>("slice_lastdim", std::move(shape), std::move(out), {x.node_ptr()},
                        [rows, width, begin, out_width](TensorNode<T>& node) {
                          auto& g = node.inputs[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < out_width; ++c) {
                              g[r * width + begin + c] += node.grad[r * out_width + c];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         to_string(x.shape()));
  }
  const std::size_t row_size = x.numel() / x.dim(0);
  const auto xd = x.data();
  std::vector<T> out(xd.begin() + begin * row_size, xd.begin() + end * row_size);
  Shape shape = x.shape();
  shape[0] = end - begin;
  return make_result<T>("slice_rows", std::move(shape), std::move(out), {x.node_ptr()},
                        [offset = begin * row_size](TensorNode<T>& node) {
                          auto& g = node.inputs[0]->grad_buffer();
                          for (std::size_t i = 0; i < node.grad.size(); ++i) g[offset + i] += node.grad[i];
                        });
}

#define MVCCL_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> transpose(const Tensor<T>&);                                                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> chw_to_hwc(const Tensor<T>&);                                                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                    \
  template Tensor<T> pool_global(const Tensor<T>&, PoolMode);                                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                   \
  template Tensor<T> relu(const Tensor<T>&);                                                            \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                         \
  template Tensor<T> log(const Tensor<T>&);                                                             \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                                     \
  template Tensor<T> l2_norm(const Tensor<T>&);                                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                            \
  template Tensor<T> concat_lastdim(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                        \
  template Tensor<T> slice_lastdim(const Tensor<T>&, std::size_t, std::size_t);                         \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);

MVCCL_INSTANTIATE_OPS(float)
MVCCL_INSTANTIATE_OPS(double)

#undef MVCCL_INSTANTIATE_OPS

}  // namespace mvccl
