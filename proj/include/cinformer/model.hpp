#pragma once

#include "cinformer/encoder.hpp"

namespace cinformer {

void add_decoder_layout(ParamLayout& layout, const ModelConfig& config);

/// D4 = image(S4); Di = ConvBlock(Concat(Up2x_bilinear(Di+1), image(Si))) for
/// i = 3..1; logits = bilinear upsample of Conv1x1(D1) back to input size.
template <class T>
Tensor<T> decoder_forward(const ParamStore<T>& ps, const EncoderOutputs<T>& enc, const ModelConfig& config);

/// Intermediate values of one forward pass.
template <class T>
struct ForwardTrace {
  FeaturePyramid<T> pyramid;
  EncoderOutputs<T> encoder;
  EncoderTrace<T> attention;
};

/// image [B,3,H,W] -> logits [B,num_classes,H,W].
template <class T>
Tensor<T> forward(const ParamStore<T>& ps, const Tensor<T>& image, const ModelConfig& config,
                  ForwardTrace<T>* trace = nullptr);

}  // namespace cinformer
