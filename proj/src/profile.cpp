#include "cinformer/profile.hpp"

#include "cinformer/model.hpp"

namespace cinformer::profile {

namespace {

// Forward FLOPs per component for a single image, from the costs the layers report.
std::map<std::string, std::uint64_t> forward_flops(const ModelConfig& config, const ParamStore<float>& ps) {
  ad::NoGradGuard no_grad;
  const std::size_t s = config.input_size;
  const auto image = Tensor<float>::full({1, 3, s, s}, 0.5f);
  FlopCounter::Session session;
  forward(ps, image, config);
  return session.totals();
}

}  // namespace

Profile profile(const ModelConfig& config) {
  SeededRng rng(0);
  const ParamStore<float> ps = init_model_params(config, rng);
  Profile out;
  for (const auto& [path, entry] : ps) {
    const std::string component = path.substr(0, path.find('.'));
    out.components[component].params += entry.value.numel();
  }
  for (const auto& [component, flops] : forward_flops(config, ps)) out.components[component].flops += flops;
  for (const auto& [_, c] : out.components) {
    out.total.params += c.params;
    out.total.flops += c.flops;
  }
  return out;
}

std::uint64_t attention_flops(const ModelConfig& config, std::size_t stage) {
  const std::size_t res = config.stage_resolution(stage);
  const std::size_t n = res * res;
  const std::size_t c = config.stage_widths[stage];
  std::uint64_t per_block = 0;
  switch (config.attention.kinds[stage]) {
    case AttentionKind::kGlobal:
      per_block = flops_of_attention(AttentionCost::kDenseGlobal, n, c, config.attention.heads, 0, 0, 0);
      break;
    case AttentionKind::kWindow:
      per_block = flops_of_attention(AttentionCost::kWindow, n, c, config.attention.heads,
                                     std::min(config.attention.window, res), 0, 0);
      break;
    case AttentionKind::kTopK: {
      const TopKOptions o = stage_topk_options(config, stage);
      per_block = flops_of_attention(o.variant == TopKVariant::kFullKey ? AttentionCost::kTopKFullKey
                                                                        : AttentionCost::kTopKSelectedKey,
                                     n, c, 1, 0, o.k_tokens, o.k_channels);
      break;
    }
  }
  return per_block * config.stage_depths[stage];
}

}  // namespace cinformer::profile
