#pragma once

#include "cinformer/ops.hpp"

namespace cinformer {

using ad::Tensor;

/// Transformer features as tokens: values [B, N, C] with N = height * width,
/// row-major over the spatial grid.
template <class T>
struct TokenMap {
  Tensor<T> values;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t batch() const { return values.dim(0); }
  std::size_t tokens() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
};

// [B,C,H,W] -> tokens [B,H*W,C]
template <class T>
TokenMap<T> to_tokens(const Tensor<T>& image) {
  if (image.rank() != 4) throw DimensionError("to_tokens expects [B,C,H,W], got " + to_string(image.shape()));
  const std::size_t b = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  Tensor<T> flat = ad::reshape(image, {b, c, h * w});
  return {ad::transpose(flat), h, w};
}

// tokens [B,H*W,C] -> [B,C,H,W]
template <class T>
Tensor<T> to_image(const TokenMap<T>& tokens) {
  if (tokens.values.rank() != 3 || tokens.tokens() != tokens.height * tokens.width) {
    throw DimensionError("token map " + to_string(tokens.values.shape()) + " inconsistent with grid " +
                         std::to_string(tokens.height) + "x" + std::to_string(tokens.width));
  }
  Tensor<T> chw = ad::transpose(tokens.values);
  return ad::reshape(chw, {tokens.batch(), tokens.channels(), tokens.height, tokens.width});
}

}  // namespace cinformer
