#include "cinformer/stem_fpn.hpp"

namespace cinformer {

namespace {
std::string stage_path(std::size_t stage) { return "stem.stage" + std::to_string(stage + 1); }
}  // namespace

void add_stem_layout(ParamLayout& layout, const ModelConfig& config) {
  nn::add_conv(layout, "stem.conv", 3, config.stem_widths[0], 3, false);
  nn::add_norm(layout, "stem.norm", config.stem_widths[0]);
  std::size_t cin = config.stem_widths[0];
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cout = config.stem_widths[s];
    nn::add_basic_block(layout, stage_path(s) + ".block0", cin, cout, 2);
    nn::add_basic_block(layout, stage_path(s) + ".block1", cout, cout, 1);
    cin = cout;
  }
}

void add_fpn_layout(ParamLayout& layout, const ModelConfig& config) {
  const std::size_t cf = config.fpn_width;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string level = std::to_string(i + 1);
    nn::add_conv(layout, "fpn.lat" + level, config.stem_widths[i], cf, 1, true);
    nn::add_conv(layout, "fpn.fuse" + level, i == 3 ? cf : 2 * cf, cf, 3, true);
  }
}

template <class T>
std::array<Tensor<T>, 4> backbone_forward(const ParamStore<T>& ps, const Tensor<T>& image,
                                          const ModelConfig& config) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw DimensionError("backbone expects [B,3,H,W], got " + to_string(image.shape()));
  }
  const std::size_t multiple = config.input_multiple();
  if (image.dim(2) % multiple != 0 || image.dim(3) % multiple != 0) {
    throw DimensionError("input " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                         " is not divisible by " + std::to_string(multiple));
  }
  Tensor<T> x = nn::conv(ps, "stem.conv", image, config.stem_stride, 1);
  x = ad::relu(nn::group_norm(ps, "stem.norm", x));
  std::array<Tensor<T>, 4> out;
  for (std::size_t s = 0; s < 4; ++s) {
    x = nn::residual_basic_block(ps, stage_path(s) + ".block0", x, 2);
    x = nn::residual_basic_block(ps, stage_path(s) + ".block1", x, 1);
    out[s] = x;
  }
  return out;
}

template <class T>
FeaturePyramid<T> fpn_topdown(const ParamStore<T>& ps, const std::array<Tensor<T>, 4>& features,
                              const ModelConfig& config) {
  (void)config;
  for (std::size_t i = 0; i + 1 < 4; ++i) {
    if (features[i].dim(2) != 2 * features[i + 1].dim(2) || features[i].dim(3) != 2 * features[i + 1].dim(3)) {
      throw DimensionError("backbone features " + to_string(features[i].shape()) + " and " +
                           to_string(features[i + 1].shape()) + " do not halve spatially");
    }
  }
  FeaturePyramid<T> p;
  p.levels[3] = nn::conv(ps, "fpn.fuse4", nn::conv(ps, "fpn.lat4", features[3], 1, 0), 1, 1);
  for (std::size_t i = 3; i-- > 0;) {
    const std::string level = std::to_string(i + 1);
    Tensor<T> top = ad::upsample(p.levels[i + 1], 2, ad::Upsample::kNearest);
    Tensor<T> lateral = nn::conv(ps, "fpn.lat" + level, features[i], 1, 0);
    p.levels[i] = nn::conv(ps, "fpn.fuse" + level, ad::concat<T>({top, lateral}, 1), 1, 1);
  }
  return p;
}

template std::array<Tensor<float>, 4> backbone_forward<float>(const ParamStore<float>&, const Tensor<float>&,
                                                              const ModelConfig&);
template std::array<Tensor<double>, 4> backbone_forward<double>(const ParamStore<double>&,
                                                                const Tensor<double>&, const ModelConfig&);
template FeaturePyramid<float> fpn_topdown<float>(const ParamStore<float>&, const std::array<Tensor<float>, 4>&,
                                                  const ModelConfig&);
template FeaturePyramid<double> fpn_topdown<double>(const ParamStore<double>&,
                                                    const std::array<Tensor<double>, 4>&, const ModelConfig&);

}  // namespace cinformer
