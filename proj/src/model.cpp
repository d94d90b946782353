#include "cinformer/model.hpp"

#include "cinformer/profile.hpp"

namespace cinformer {

using profile::FlopCounter;

namespace {

std::string decoder_path(std::size_t stage) { return "decoder.stage" + std::to_string(stage + 1); }

template <class T>
Tensor<T> conv_block(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
  Tensor<T> h = ad::relu(nn::group_norm(ps, path + ".norm1", nn::conv(ps, path + ".conv1", x, 1, 1)));
  return ad::relu(nn::group_norm(ps, path + ".norm2", nn::conv(ps, path + ".conv2", h, 1, 1)));
}

}  // namespace

void add_decoder_layout(ParamLayout& layout, const ModelConfig& config) {
  const auto& c = config.stage_widths;
  for (std::size_t i = 3; i-- > 0;) {
    const std::string p = decoder_path(i);
    nn::add_conv(layout, p + ".conv1", c[i + 1] + c[i], c[i], 3, false);
    nn::add_norm(layout, p + ".norm1", c[i]);
    nn::add_conv(layout, p + ".conv2", c[i], c[i], 3, false);
    nn::add_norm(layout, p + ".norm2", c[i]);
  }
  nn::add_conv(layout, "head", c[0], config.num_classes, 1, true);
}

template <class T>
Tensor<T> decoder_forward(const ParamStore<T>& ps, const EncoderOutputs<T>& enc, const ModelConfig& config) {
  Tensor<T> d;
  {
    FlopCounter::Component scope("decoder");
    d = to_image(enc.stages[3]);
    for (std::size_t i = 3; i-- > 0;) {
      Tensor<T> up = ad::upsample(d, 2, ad::Upsample::kBilinear);
      d = conv_block(ps, decoder_path(i), ad::concat<T>({up, to_image(enc.stages[i])}, 1));
    }
  }
  FlopCounter::Component scope("head");
  Tensor<T> logits = nn::conv(ps, "head", d, 1, 0);
  return ad::upsample(logits, 2 * config.stem_stride, ad::Upsample::kBilinear);
}

template <class T>
Tensor<T> forward(const ParamStore<T>& ps, const Tensor<T>& image, const ModelConfig& config,
                  ForwardTrace<T>* trace) {
  FeaturePyramid<T> pyramid;
  {
    std::array<Tensor<T>, 4> features;
    {
      FlopCounter::Component scope("stem");
      features = backbone_forward(ps, image, config);
    }
    FlopCounter::Component scope("fpn");
    pyramid = fpn_topdown(ps, features, config);
  }
  EncoderOutputs<T> enc;
  {
    FlopCounter::Component scope("encoder");
    enc = encoder_forward(ps, pyramid, config, trace != nullptr ? &trace->attention : nullptr);
  }
  Tensor<T> logits = decoder_forward(ps, enc, config);
  if (trace != nullptr) {
    trace->pyramid = pyramid;
    trace->encoder = enc;
  }
  return logits;
}

template Tensor<float> decoder_forward<float>(const ParamStore<float>&, const EncoderOutputs<float>&,
                                              const ModelConfig&);
template Tensor<double> decoder_forward<double>(const ParamStore<double>&, const EncoderOutputs<double>&,
                                                const ModelConfig&);
template Tensor<float> forward<float>(const ParamStore<float>&, const Tensor<float>&, const ModelConfig&,
                                      ForwardTrace<float>*);
template Tensor<double> forward<double>(const ParamStore<double>&, const Tensor<double>&, const ModelConfig&,
                                        ForwardTrace<double>*);

}  // namespace cinformer
