#include "cinformer/layers.hpp"

#include "cinformer/profile.hpp"

namespace cinformer::nn {

using profile::FlopCounter;

void add_conv(ParamLayout& layout, const std::string& path, std::size_t cin, std::size_t cout,
              std::size_t kernel, bool bias) {
  layout.push_back({path + ".weight", {cout, cin, kernel, kernel}, InitKind::kKaimingUniform,
                    cin * kernel * kernel});
  if (bias) layout.push_back({path + ".bias", {cout}, InitKind::kZeros, 1});
}

void add_linear(ParamLayout& layout, const std::string& path, std::size_t cin, std::size_t cout,
                bool bias) {
  layout.push_back({path + ".weight", {cin, cout}, InitKind::kKaimingUniform, cin});
  if (bias) layout.push_back({path + ".bias", {cout}, InitKind::kZeros, 1});
}

void add_norm(ParamLayout& layout, const std::string& path, std::size_t channels) {
  layout.push_back({path + ".gamma", {channels}, InitKind::kOnes, 1});
  layout.push_back({path + ".beta", {channels}, InitKind::kZeros, 1});
}

void add_basic_block(ParamLayout& layout, const std::string& path, std::size_t cin,
                     std::size_t cout, std::size_t stride) {
  add_conv(layout, path + ".conv1", cin, cout, 3, false);
  add_norm(layout, path + ".norm1", cout);
  add_conv(layout, path + ".conv2", cout, cout, 3, false);
  add_norm(layout, path + ".norm2", cout);
  if (stride != 1 || cin != cout) {
    add_conv(layout, path + ".down.conv", cin, cout, 1, false);
    add_norm(layout, path + ".down.norm", cout);
  }
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  FlopCounter::add(2 * (x.numel() / x.dim(-1)) * weight.dim(0) * weight.dim(1));
  Tensor<T> y = ad::matmul(x, weight);
  if (bias == nullptr) return y;
  return ad::add(y, *bias);
}

template <class T>
Tensor<T> layernorm_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (gamma.numel() != x.dim(-1) || beta.numel() != x.dim(-1)) {
    throw DimensionError("layernorm_affine: affine length does not match " + to_string(x.shape()));
  }
  FlopCounter::add((profile::kNormFlopsPerElement + profile::kAffineFlopsPerElement) * x.numel());
  return ad::add(ad::mul(ad::layernorm(x, -1), gamma), beta);
}

template <class T>
Tensor<T> conv(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x,
               std::size_t stride, std::size_t padding) {
  const Tensor<T>& w = ps.get(path + ".weight");
  const std::string bias_path = path + ".bias";
  const Tensor<T>* bias = ps.contains(bias_path) ? &ps.get(bias_path) : nullptr;
  Tensor<T> y = ad::conv2d(x, w, bias, stride, padding, path);
  FlopCounter::add(2 * y.numel() * w.dim(1) * w.dim(2) * w.dim(3));
  return y;
}

template <class T>
Tensor<T> linear(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
  const std::string bias_path = path + ".bias";
  const Tensor<T>* bias = ps.contains(bias_path) ? &ps.get(bias_path) : nullptr;
  try {
    return linear(x, ps.get(path + ".weight"), bias);
  } catch (const DimensionError& e) {
    throw DimensionError(path + ": " + e.what());
  }
}

template <class T>
Tensor<T> layernorm_affine(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
  return layernorm_affine(x, ps.get(path + ".gamma"), ps.get(path + ".beta"));
}

template <class T>
Tensor<T> group_norm(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
  FlopCounter::add((profile::kNormFlopsPerElement + profile::kAffineFlopsPerElement) * x.numel());
  return ad::group_norm(x, ps.get(path + ".gamma"), ps.get(path + ".beta"), kNormGroups);
}

template <class T>
Tensor<T> residual_basic_block(const ParamStore<T>& ps, const std::string& path,
                               const Tensor<T>& x, std::size_t stride) {
  if (stride != 1 && stride != 2) throw DimensionError(path + ": stride must be 1 or 2");
  Tensor<T> h = conv(ps, path + ".conv1", x, stride, 1);
  h = ad::relu(group_norm(ps, path + ".norm1", h));
  h = conv(ps, path + ".conv2", h, 1, 1);
  h = group_norm(ps, path + ".norm2", h);
  Tensor<T> shortcut = x;
  if (ps.contains(path + ".down.conv.weight")) {
    shortcut = group_norm(ps, path + ".down.norm", conv(ps, path + ".down.conv", x, stride, 0));
  }
  return ad::relu(ad::add(h, shortcut));
}

#define CINFORMER_INSTANTIATE(T)                                                                  \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);             \
  template Tensor<T> layernorm_affine<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> conv<T>(const ParamStore<T>&, const std::string&, const Tensor<T>&,          \
                             std::size_t, std::size_t);                                           \
  template Tensor<T> linear<T>(const ParamStore<T>&, const std::string&, const Tensor<T>&);       \
  template Tensor<T> layernorm_affine<T>(const ParamStore<T>&, const std::string&,                \
                                         const Tensor<T>&);                                       \
  template Tensor<T> group_norm<T>(const ParamStore<T>&, const std::string&, const Tensor<T>&);   \
  template Tensor<T> residual_basic_block<T>(const ParamStore<T>&, const std::string&,            \
                                             const Tensor<T>&, std::size_t);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer::nn
