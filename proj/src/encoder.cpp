#include "cinformer/encoder.hpp"

namespace cinformer {

namespace {
std::string stage_path(std::size_t stage) { return "encoder.stage" + std::to_string(stage + 1); }
}  // namespace

void add_encoder_layout(ParamLayout& layout, const ModelConfig& config) {
  const std::size_t cf = config.fpn_width;
  nn::add_linear(layout, "encoder.embed", cf, config.stage_widths[0], true);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string sp = stage_path(s);
    const std::size_t c = config.stage_widths[s];
    if (s > 0) {
      const std::size_t prev = config.stage_widths[s - 1];
      nn::add_norm(layout, sp + ".merge.norm", 4 * prev);
      nn::add_linear(layout, sp + ".merge.reduce", 4 * prev, 2 * prev, false);
      if (config.inject) {
        nn::add_conv(layout, sp + ".inject.conv", cf, cf, 1, true);
        nn::add_linear(layout, sp + ".inject.proj", c + cf, c, true);
      }
    }
    for (std::size_t b = 0; b < config.stage_depths[s]; ++b) {
      const std::string bp = sp + ".block" + std::to_string(b);
      nn::add_norm(layout, bp + ".norm1", c);
      if (config.attention.kinds[s] == AttentionKind::kTopK) {
        add_topk_attention_layout(layout, bp + ".attn", c);
      } else {
        add_window_attention_layout(layout, bp + ".attn", c);
      }
      nn::add_norm(layout, bp + ".norm2", c);
      nn::add_linear(layout, bp + ".mlp.fc1", c, 4 * c, true);
      nn::add_linear(layout, bp + ".mlp.fc2", 4 * c, c, true);
    }
  }
}

TopKOptions stage_topk_options(const ModelConfig& config, std::size_t stage) {
  const std::size_t res = config.stage_resolution(stage);
  TopKOptions o;
  o.k_tokens = std::min(config.attention.k_tokens, res * res);
  o.k_channels = std::min(config.attention.k_channels, config.stage_widths[stage]);
  o.variant = config.attention.topk_variant;
  return o;
}

template <class T>
TokenMap<T> inject(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& s_prev,
                   const Tensor<T>& r) {
  if (r.rank() != 4 || r.dim(2) != s_prev.height || r.dim(3) != s_prev.width || r.dim(0) != s_prev.batch()) {
    throw DimensionError(path + ": CNN feature " + to_string(r.shape()) + " does not match token map " +
                         to_string(s_prev.values.shape()) + " on a " + std::to_string(s_prev.height) +
                         "x" + std::to_string(s_prev.width) + " grid");
  }
  const TokenMap<T> adjusted = to_tokens(nn::conv(ps, path + ".conv", r, 1, 0));
  Tensor<T> fused = ad::concat<T>({s_prev.values, adjusted.values}, -1);
  return {nn::linear(ps, path + ".proj", fused), s_prev.height, s_prev.width};
}

template <class T>
TokenMap<T> patch_merge(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& s) {
  if (s.height % 2 != 0 || s.width % 2 != 0) {
    throw DimensionError(path + ": cannot merge odd grid " + std::to_string(s.height) + "x" +
                         std::to_string(s.width));
  }
  const std::size_t b = s.batch();
  const std::size_t c = s.channels();
  const std::size_t hh = s.height / 2;
  const std::size_t hw = s.width / 2;
  // [B, hh, dy, hw, dx, C] -> [B, hh, hw, dx, dy, C]: neighbour order (0,0),(1,0),(0,1),(1,1).
  Tensor<T> t = ad::reshape(s.values, {b, hh, 2, hw, 2, c});
  t = ad::permute(t, {0, 1, 3, 4, 2, 5});
  t = ad::reshape(t, {b, hh * hw, 4 * c});
  t = nn::layernorm_affine(ps, path + ".norm", t);
  return {nn::linear(ps, path + ".reduce", t), hh, hw};
}

template <class T>
TokenMap<T> transformer_block(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& x,
                              AttentionKind kind, const ModelConfig& config, std::size_t stage,
                              AttentionTrace<T>* trace) {
  const TokenMap<T> normed{nn::layernorm_affine(ps, path + ".norm1", x.values), x.height, x.width};
  Tensor<T> update;
  switch (kind) {
    case AttentionKind::kTopK:
      update = topk_attention(ps, path + ".attn", normed, stage_topk_options(config, stage), trace);
      break;
    case AttentionKind::kWindow:
      update = window_attention(ps, path + ".attn", normed, config.attention.heads,
                                config.attention.window, trace);
      break;
    case AttentionKind::kGlobal:
      update = window_attention(ps, path + ".attn", normed, config.attention.heads, 0, trace);
      break;
  }
  Tensor<T> y = ad::add(x.values, update);
  Tensor<T> h = nn::layernorm_affine(ps, path + ".norm2", y);
  h = nn::linear(ps, path + ".mlp.fc2", ad::gelu(nn::linear(ps, path + ".mlp.fc1", h)));
  return {ad::add(y, h), x.height, x.width};
}

template <class T>
EncoderOutputs<T> encoder_forward(const ParamStore<T>& ps, const FeaturePyramid<T>& pyramid,
                                  const ModelConfig& config, EncoderTrace<T>* trace) {
  EncoderOutputs<T> out;
  const TokenMap<T> r1 = to_tokens(pyramid.levels[0]);
  TokenMap<T> x{nn::linear(ps, "encoder.embed", r1.values), r1.height, r1.width};
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string sp = stage_path(s);
    if (s > 0) {
      x = patch_merge(ps, sp + ".merge", out.stages[s - 1]);
      if (config.inject) x = inject(ps, sp + ".inject", x, pyramid.levels[s]);
    }
    for (std::size_t b = 0; b < config.stage_depths[s]; ++b) {
      AttentionTrace<T>* block_trace = nullptr;
      if (trace != nullptr) block_trace = &trace->blocks[s].emplace_back();
      x = transformer_block(ps, sp + ".block" + std::to_string(b), x, config.attention.kinds[s], config, s,
                            block_trace);
    }
    out.stages[s] = x;
  }
  return out;
}

#define CINFORMER_INSTANTIATE(T)                                                                       \
  template TokenMap<T> inject<T>(const ParamStore<T>&, const std::string&, const TokenMap<T>&,         \
                                 const Tensor<T>&);                                                    \
  template TokenMap<T> patch_merge<T>(const ParamStore<T>&, const std::string&, const TokenMap<T>&);   \
  template TokenMap<T> transformer_block<T>(const ParamStore<T>&, const std::string&,                  \
                                            const TokenMap<T>&, AttentionKind, const ModelConfig&,     \
                                            std::size_t, AttentionTrace<T>*);                          \
  template EncoderOutputs<T> encoder_forward<T>(const ParamStore<T>&, const FeaturePyramid<T>&,        \
                                                const ModelConfig&, EncoderTrace<T>*);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer
