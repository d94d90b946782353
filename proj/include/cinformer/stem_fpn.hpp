#pragma once

#include <array>

#include "cinformer/layers.hpp"

namespace cinformer {

/// Injected CNN features R1..R4 at strides 4/8/16/32 (for the default stem
/// stride), all fpn_width channels wide.
template <class T>
struct FeaturePyramid {
  std::array<Tensor<T>, 4> levels;
};

void add_stem_layout(ParamLayout& layout, const ModelConfig& config);
void add_fpn_layout(ParamLayout& layout, const ModelConfig& config);

/// Stem conv then four stages of two basic blocks; returns B1..B4.
template <class T>
std::array<Tensor<T>, 4> backbone_forward(const ParamStore<T>& ps, const Tensor<T>& image,
                                          const ModelConfig& config);

/// R4 = Fuse4(Lat4(B4)); Ri = Fusei(Concat(Up2x(Ri+1), Lati(Bi))) for i = 3..1.
template <class T>
FeaturePyramid<T> fpn_topdown(const ParamStore<T>& ps, const std::array<Tensor<T>, 4>& features,
                              const ModelConfig& config);

}  // namespace cinformer
