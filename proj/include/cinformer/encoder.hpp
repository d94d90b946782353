#pragma once

#include <array>

#include "cinformer/attention.hpp"
#include "cinformer/stem_fpn.hpp"

namespace cinformer {

/// Transformer stage outputs S1..S4.
template <class T>
struct EncoderOutputs {
  std::array<TokenMap<T>, 4> stages;
};

/// Per-stage, per-block attention side outputs.
template <class T>
struct EncoderTrace {
  std::array<std::vector<AttentionTrace<T>>, 4> blocks;
};

void add_encoder_layout(ParamLayout& layout, const ModelConfig& config);

/// Top-K sizes actually used at a stage: the configured k clamped to the
/// stage's token count and width.
TopKOptions stage_topk_options(const ModelConfig& config, std::size_t stage);

/// Y = Linear(Concat(s_prev, Reshape(Conv1x1(r)))) projecting back to the
/// width of s_prev.
template <class T>
TokenMap<T> inject(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& s_prev,
                   const Tensor<T>& r);

/// 2x2 neighbourhood concat (4C) -> layernorm_affine -> linear to 2C.
template <class T>
TokenMap<T> patch_merge(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& s);

/// Pre-norm block: x += Attn(LN(x)); x += MLP(LN(x)).
template <class T>
TokenMap<T> transformer_block(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& x,
                              AttentionKind kind, const ModelConfig& config, std::size_t stage,
                              AttentionTrace<T>* trace = nullptr);

template <class T>
EncoderOutputs<T> encoder_forward(const ParamStore<T>& ps, const FeaturePyramid<T>& pyramid,
                                  const ModelConfig& config, EncoderTrace<T>* trace = nullptr);

}  // namespace cinformer
