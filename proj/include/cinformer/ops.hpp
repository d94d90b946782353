#pragma once

// Differentiable tensor operations. Every op is instantiated for float (model
// state) and double (finite-difference checking).
//
// Broadcasting is limited to "leading batch + matching trailing": in binary
// elementwise ops one operand may have a shape equal to a trailing suffix of
// the other's, or a single element.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cinformer/tensor.hpp"

namespace cinformer::ad {

enum class Unary { kNeg, kExp, kLog, kSqrt, kRelu, kGelu, kSigmoid };
enum class Binary { kAdd, kSub, kMul, kDiv };
enum class Reduce { kSum, kMean, kMax, kVariance };
enum class Upsample { kNearest, kBilinear };

// tanh-approximation constant sqrt(2/pi) used by gelu.
inline constexpr double kGeluC = 0.7978845608;

template <class T>
Tensor<T> unary(Unary kind, const Tensor<T>& x);
template <class T>
Tensor<T> binary(Binary kind, const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> neg(const Tensor<T>& x) { return unary(Unary::kNeg, x); }
template <class T> Tensor<T> exp(const Tensor<T>& x) { return unary(Unary::kExp, x); }
template <class T> Tensor<T> log(const Tensor<T>& x) { return unary(Unary::kLog, x); }
template <class T> Tensor<T> sqrt(const Tensor<T>& x) { return unary(Unary::kSqrt, x); }
template <class T> Tensor<T> relu(const Tensor<T>& x) { return unary(Unary::kRelu, x); }
template <class T> Tensor<T> gelu(const Tensor<T>& x) { return unary(Unary::kGelu, x); }
template <class T> Tensor<T> sigmoid(const Tensor<T>& x) { return unary(Unary::kSigmoid, x); }
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(Binary::kAdd, a, b); }
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(Binary::kSub, a, b); }
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(Binary::kMul, a, b); }
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary(Binary::kDiv, a, b); }

// x * s for a constant s (no gradient to s).
template <class T>
Tensor<T> scale(const Tensor<T>& x, double s);

// a[..,M,K] x b[..,K,P]. Batch extents must match, or one side is a plain matrix.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x);
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length);

// Reductions drop the reduced axis. variance is the population (1/n) variance.
// max resolves ties toward the lower index.
template <class T>
Tensor<T> reduce(Reduce kind, const Tensor<T>& x, int axis);
template <class T> Tensor<T> sum(const Tensor<T>& x, int axis) { return reduce(Reduce::kSum, x, axis); }
template <class T> Tensor<T> mean(const Tensor<T>& x, int axis) { return reduce(Reduce::kMean, x, axis); }
template <class T> Tensor<T> max(const Tensor<T>& x, int axis) { return reduce(Reduce::kMax, x, axis); }
template <class T> Tensor<T> variance(const Tensor<T>& x, int axis) { return reduce(Reduce::kVariance, x, axis); }

// Index of the maximum along the axis, lower index on ties.
template <class T>
std::vector<std::size_t> argmax(const Tensor<T>& x, int axis);

// Sum of every element, in flat index order.
template <class T>
Tensor<T> sum_all(const Tensor<T>& x);

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis);

// (x - mean) / sqrt(var + eps) along the axis, no affine.
template <class T>
Tensor<T> layernorm(const Tensor<T>& x, int axis, double eps = 1e-5);

/// Per-sample row/column restriction of a [B,N,C] (or [N,C]) tensor.
struct RowColIndex {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
};

std::vector<std::size_t> iota_indices(std::size_t n);

template <class T>
Tensor<T> gather(const Tensor<T>& x, const std::vector<RowColIndex>& index);
// Writes src[B,r,c] into a zero [B,rows,cols] tensor at the indexed positions.
template <class T>
Tensor<T> scatter_add(const Tensor<T>& src, const std::vector<RowColIndex>& index,
                      std::size_t rows, std::size_t cols);

// x[B,Cin,H,W], weight[Cout,Cin,k,k], optional bias[Cout]. `name` labels errors.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::size_t stride, std::size_t padding, const std::string& name = "conv2d");

// x[B,C,H,W] normalized over (C/groups, H, W) blocks, then per-channel affine.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, double eps = 1e-5);

// Integer-factor spatial resize of x[B,C,H,W]. Bilinear uses the half-pixel
// convention src = (dst + 0.5) / factor - 0.5, clamped to the border.
template <class T>
Tensor<T> upsample(const Tensor<T>& x, std::size_t factor, Upsample mode);

// Mean over non-ignored pixels of -log softmax(logits)[label].
// logits[B,K,H,W], labels flat [B*H*W].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& labels,
                        std::optional<std::int32_t> ignore_index = std::nullopt);

}  // namespace cinformer::ad
