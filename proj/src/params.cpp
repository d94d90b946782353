#include "cinformer/params.hpp"

#include <algorithm>
#include <cmath>

#include "cinformer/model.hpp"

namespace cinformer {

ParamLayout model_layout(const ModelConfig& config) {
  ParamLayout layout;
  add_stem_layout(layout, config);
  add_fpn_layout(layout, config);
  add_encoder_layout(layout, config);
  add_decoder_layout(layout, config);
  return layout;
}

ParamStore<float> init_params(const ParamLayout& layout, SeededRng& rng) {
  std::vector<const ParamSpec*> order;
  order.reserve(layout.size());
  for (const auto& spec : layout) order.push_back(&spec);
  std::sort(order.begin(), order.end(), [](const ParamSpec* a, const ParamSpec* b) { return a->path < b->path; });

  ParamStore<float> store;
  for (const ParamSpec* spec : order) {
    std::vector<float> v(numel(spec->shape));
    switch (spec->init) {
      case InitKind::kZeros:
        break;
      case InitKind::kOnes:
        std::fill(v.begin(), v.end(), 1.0f);
        break;
      case InitKind::kKaimingUniform: {
        const double bound = std::sqrt(6.0 / static_cast<double>(spec->fan_in));
        for (float& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
    }
    store.add(spec->path, Tensor<float>::from(spec->shape, std::move(v)));
  }
  return store;
}

ParamStore<float> init_model_params(const ModelConfig& config, SeededRng& rng) {
  ParamStore<float> store = init_params(model_layout(config), rng);
  if (config.freeze_stem) {
    store.set_trainable("stem.", false);
    store.set_trainable("fpn.", false);
  }
  return store;
}

}  // namespace cinformer
