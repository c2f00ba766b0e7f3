#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "msgnet/tensor.hpp"

// Differentiable tensor operations. Every op records a backward rule on the
// calling thread's tape when any input requires grad and grad mode is on.
namespace msgnet {

enum class Elementwise { kAdd, kSub, kMul, kDiv };
enum class Activation { kRelu, kSigmoid, kSoftplus, kLog };
enum class Reduction { kSum, kMean, kGlobalAvgPoolSpatial };

// b broadcasts into a by the trailing-dimension rule: b's extents align with
// a's trailing extents and each must be equal or 1. Result has a's shape.
template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::kAdd); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::kSub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::kMul); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, Elementwise::kDiv); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::kRelu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::kSigmoid); }
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) { return activation(x, Activation::kSoftplus); }
// Elementwise natural log; inputs must be positive.
template <typename T>
Tensor<T> natural_log(const Tensor<T>& x) { return activation(x, Activation::kLog); }

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

// Half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t h,
               std::size_t w);

// Copy of base with the spatial window at (top,left) replaced by patch.
template <typename T>
Tensor<T> paste(const Tensor<T>& base, const Tensor<T>& patch, std::size_t top,
                std::size_t left);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);

struct CellIndex {
  std::size_t batch;
  std::size_t row;
  std::size_t col;
};

// Gathers the channel vectors of x[B,C,H,W] at the given cells -> [P,C].
template <typename T>
Tensor<T> gather_cells(const Tensor<T>& x, const std::vector<CellIndex>& cells);

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, Reduction kind);

template <typename T>
Tensor<T> sum(const Tensor<T>& x) { return reduce(x, Reduction::kSum); }
template <typename T>
Tensor<T> mean(const Tensor<T>& x) { return reduce(x, Reduction::kMean); }
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return reduce(x, Reduction::kGlobalAvgPoolSpatial);
}

// Same values, no gradient path.
template <typename T>
Tensor<T> detach(const Tensor<T>& x);

}  // namespace msgnet
