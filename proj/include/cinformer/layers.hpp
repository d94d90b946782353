#pragma once

// Parameterized layers over ParamStore paths, plus the layout helpers that
// declare those parameters.

#include <string>

#include "cinformer/ops.hpp"
#include "cinformer/params.hpp"

namespace cinformer::nn {

void add_conv(ParamLayout& layout, const std::string& path, std::size_t cin, std::size_t cout,
              std::size_t kernel, bool bias);
void add_linear(ParamLayout& layout, const std::string& path, std::size_t cin, std::size_t cout,
                bool bias);
// gamma (ones) and beta (zeros) of length `channels`.
void add_norm(ParamLayout& layout, const std::string& path, std::size_t channels);
void add_basic_block(ParamLayout& layout, const std::string& path, std::size_t cin,
                     std::size_t cout, std::size_t stride);

// x[..,Cin] * weight[Cin,Cout] (+ bias[Cout]).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias);

// Per-token standardization over the last axis followed by gamma/beta.
template <class T>
Tensor<T> layernorm_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);

// `path`.weight and, when present, `path`.bias.
template <class T>
Tensor<T> conv(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x,
               std::size_t stride, std::size_t padding);
template <class T>
Tensor<T> linear(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x);
template <class T>
Tensor<T> layernorm_affine(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x);
template <class T>
Tensor<T> group_norm(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x);

/// relu(conv-norm-relu-conv-norm + shortcut); the shortcut is a strided 1x1
/// conv + norm whenever the shape changes.
template <class T>
Tensor<T> residual_basic_block(const ParamStore<T>& ps, const std::string& path,
                               const Tensor<T>& x, std::size_t stride);

}  // namespace cinformer::nn
