#include <cmath>
#include <string>

#include "cinformer/kernels.hpp"
#include "cinformer/ops.hpp"

namespace cinformer::ad {
namespace {

void require_image(const Shape& s, const std::string& what) {
  if (s.size() != 4) throw DimensionError(what + ": expected [B,C,H,W], got " + to_string(s));
}

// Per-axis bilinear taps for the half-pixel convention.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

Taps bilinear_taps(std::size_t in, std::size_t out, std::size_t factor) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.lo[d] = i0;
    t.hi[d] = i0 + 1 < in ? i0 + 1 : i0;
    t.frac[d] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 std::size_t stride, std::size_t padding, const std::string& name) {
  require_image(x.shape(), name);
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw DimensionError(name + ": weight must be [Cout,Cin,k,k], got " + to_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t cout = weight.dim(0);
  kernels::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, padding};
  if (weight.dim(1) != g.channels) {
    throw DimensionError(name + ": input has " + std::to_string(g.channels) +
                         " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  if (stride == 0 || g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel) {
    throw DimensionError(name + ": kernel " + std::to_string(g.kernel) + " stride " +
                         std::to_string(stride) + " does not fit input " + to_string(x.shape()));
  }
  if (bias != nullptr && (bias->numel() != cout)) {
    throw DimensionError(name + ": bias length " + std::to_string(bias->numel()) + " != " +
                         std::to_string(cout));
  }
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t plane = oh * ow;
  const std::size_t in_size = g.channels * g.height * g.width;
  const bool direct = g.kernel == 1 && stride == 1 && padding == 0;
  std::vector<T> out(batch * cout * plane);
  std::vector<T> col(direct ? 0 : g.patch_size() * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* img = x.values().data() + b * in_size;
    const T* src = img;
    if (!direct) {
      kernels::im2col(g, img, col.data());
      src = col.data();
    }
    T* ob = out.data() + b * cout * plane;
    kernels::gemm(cout, plane, g.patch_size(), weight.values().data(), src, ob, false);
    if (bias != nullptr) {
      for (std::size_t c = 0; c < cout; ++c) {
        const T bv = (*bias)[c];
        for (std::size_t i = 0; i < plane; ++i) ob[c * plane + i] += bv;
      }
    }
  }
  Shape out_shape{batch, cout, oh, ow};
  auto backward = [g, batch, cout, plane, in_size, direct, has_bias = bias != nullptr](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    const std::size_t patch = g.patch_size();
    std::vector<T> col(direct ? 0 : patch * plane);
    std::vector<T> dcol(patch * plane);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* up = self.grad.data() + b * cout * plane;
      if (pw.requires_grad) {
        const T* img = px.value.data() + b * in_size;
        const T* src = img;
        if (!direct) {
          kernels::im2col(g, img, col.data());
          src = col.data();
        }
        kernels::gemm_nt(cout, patch, plane, up, src, pw.grad_buffer().data(), true);
      }
      if (px.requires_grad) {
        T* dx = px.grad_buffer().data() + b * in_size;
        if (direct) {
          kernels::gemm_tn(patch, plane, cout, pw.value.data(), up, dx, true);
        } else {
          kernels::gemm_tn(patch, plane, cout, pw.value.data(), up, dcol.data(), false);
          kernels::col2im(g, dcol.data(), dx);
        }
      }
      if (has_bias && self.parents[2]->requires_grad) {
        auto& gb = self.parents[2]->grad_buffer();
        for (std::size_t c = 0; c < cout; ++c) {
          T s = T(0);
          for (std::size_t i = 0; i < plane; ++i) s += up[c * plane + i];
          gb[c] += s;
        }
      }
    }
  };
  if (bias != nullptr) {
    return make_result<T>("conv2d", std::move(out_shape), std::move(out), {&x, &weight, bias}, backward);
  }
  return make_result<T>("conv2d", std::move(out_shape), std::move(out), {&x, &weight}, backward);
}

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     std::size_t groups, double eps) {
  require_image(x.shape(), "group_norm");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  if (groups == 0 || channels % groups != 0) {
    throw DimensionError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  }
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw DimensionError("group_norm: affine length does not match " + std::to_string(channels));
  }
  const std::size_t per_group = channels / groups;
  const std::size_t block = per_group * plane;
  const T inv_n = T(1) / static_cast<T>(block);
  const auto& xv = x.values();
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(batch * groups);
  std::vector<T> out(xv.size());
  for (std::size_t bg = 0; bg < batch * groups; ++bg) {
    const T* src = xv.data() + bg * block;
    T s = T(0);
    for (std::size_t i = 0; i < block; ++i) s += src[i];
    const T mu = s * inv_n;
    T q = T(0);
    for (std::size_t i = 0; i < block; ++i) q += (src[i] - mu) * (src[i] - mu);
    const T is = T(1) / std::sqrt(q * inv_n + static_cast<T>(eps));
    inv_std[bg] = is;
    const std::size_t c0 = (bg % groups) * per_group;
    for (std::size_t i = 0; i < block; ++i) {
      const std::size_t c = c0 + i / plane;
      const T h = (src[i] - mu) * is;
      xhat[bg * block + i] = h;
      out[bg * block + i] = h * gamma[c] + beta[c];
    }
  }
  return make_result<T>("group_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                        [batch, groups, per_group, plane, block, inv_n, xhat = std::move(xhat),
                         inv_std = std::move(inv_std)](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pg = *self.parents[1];
    Node<T>& pb = *self.parents[2];
    const auto& up = self.grad;
    for (std::size_t bg = 0; bg < batch * groups; ++bg) {
      const std::size_t c0 = (bg % groups) * per_group;
      const T* u = up.data() + bg * block;
      const T* h = xhat.data() + bg * block;
      if (pg.requires_grad || pb.requires_grad) {
        for (std::size_t cc = 0; cc < per_group; ++cc) {
          T sg = T(0);
          T sb = T(0);
          for (std::size_t i = cc * plane; i < (cc + 1) * plane; ++i) {
            sg += u[i] * h[i];
            sb += u[i];
          }
          if (pg.requires_grad) pg.grad_buffer()[c0 + cc] += sg;
          if (pb.requires_grad) pb.grad_buffer()[c0 + cc] += sb;
        }
      }
      if (px.requires_grad) {
        T m1 = T(0);
        T m2 = T(0);
        for (std::size_t i = 0; i < block; ++i) {
          const T d = u[i] * pg.value[c0 + i / plane];
          m1 += d;
          m2 += d * h[i];
        }
        m1 *= inv_n;
        m2 *= inv_n;
        T* gx = px.grad_buffer().data() + bg * block;
        const T is = inv_std[bg];
        for (std::size_t i = 0; i < block; ++i) {
          const T d = u[i] * pg.value[c0 + i / plane];
          gx[i] += is * (d - m1 - h[i] * m2);
        }
      }
    }
  });
}

template <class T>
Tensor<T> upsample(const Tensor<T>& x, std::size_t factor, Upsample mode) {
  require_image(x.shape(), "upsample");
  if (factor == 0) throw DimensionError("upsample factor must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2);
  const std::size_t w = x.dim(3);
  const std::size_t oh = h * factor;
  const std::size_t ow = w * factor;
  const auto& xv = x.values();
  std::vector<T> out(planes * oh * ow);
  Shape out_shape{x.dim(0), x.dim(1), oh, ow};
  if (mode == Upsample::kNearest) {
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          out[(p * oh + y) * ow + xx] = xv[(p * h + y / factor) * w + xx / factor];
        }
      }
    }
    return make_result<T>("upsample_nearest", std::move(out_shape), std::move(out), {&x},
                          [planes, h, w, oh, ow, factor](Node<T>& self) {
      Node<T>& px = *self.parents[0];
      if (!px.requires_grad) return;
      auto& g = px.grad_buffer();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            g[(p * h + y / factor) * w + xx / factor] += self.grad[(p * oh + y) * ow + xx];
          }
        }
      }
    });
  }
  const Taps ty = bilinear_taps(h, oh, factor);
  const Taps tx = bilinear_taps(w, ow, factor);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      const T* r0 = src + ty.lo[y] * w;
      const T* r1 = src + ty.hi[y] * w;
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T fx = static_cast<T>(tx.frac[xx]);
        const T top = (T(1) - fx) * r0[tx.lo[xx]] + fx * r0[tx.hi[xx]];
        const T bot = (T(1) - fx) * r1[tx.lo[xx]] + fx * r1[tx.hi[xx]];
        out[(p * oh + y) * ow + xx] = (T(1) - fy) * top + fy * bot;
      }
    }
  }
  return make_result<T>("upsample_bilinear", std::move(out_shape), std::move(out), {&x},
                        [planes, h, w, oh, ow, ty, tx](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = g.data() + p * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        const T fy = static_cast<T>(ty.frac[y]);
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T fx = static_cast<T>(tx.frac[xx]);
          const T u = self.grad[(p * oh + y) * ow + xx];
          dst[ty.lo[y] * w + tx.lo[xx]] += u * (T(1) - fy) * (T(1) - fx);
          dst[ty.lo[y] * w + tx.hi[xx]] += u * (T(1) - fy) * fx;
          dst[ty.hi[y] * w + tx.lo[xx]] += u * fy * (T(1) - fx);
          dst[ty.hi[y] * w + tx.hi[xx]] += u * fy * fx;
        }
      }
    }
  });
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int32_t>& labels,
                        std::optional<std::int32_t> ignore_index) {
  require_image(logits.shape(), "cross_entropy");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  const std::size_t h = logits.dim(2);
  const std::size_t w = logits.dim(3);
  const std::size_t plane = h * w;
  if (labels.size() != batch * plane) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(logits.shape()));
  }
  const auto& lv = logits.values();
  std::vector<T> prob(lv.size());
  T total = T(0);
  std::size_t counted = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::int32_t label = labels[b * plane + i];
      if (ignore_index && label == *ignore_index) continue;
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw DataError("mask value " + std::to_string(label) + " out of range at sample " +
                        std::to_string(b) + " pixel (" + std::to_string(i / w) + "," +
                        std::to_string(i % w) + ")");
      }
      const T* l = lv.data() + b * classes * plane + i;
      T mx = l[0];
      for (std::size_t k = 1; k < classes; ++k) mx = std::max(mx, l[k * plane]);
      T s = T(0);
      for (std::size_t k = 0; k < classes; ++k) s += std::exp(l[k * plane] - mx);
      const T lse = mx + std::log(s);
      total += lse - l[static_cast<std::size_t>(label) * plane];
      for (std::size_t k = 0; k < classes; ++k) {
        prob[b * classes * plane + k * plane + i] = std::exp(l[k * plane] - lse);
      }
      ++counted;
    }
  }
  if (counted == 0) throw DataError("cross_entropy: every pixel is ignored");
  const T inv = T(1) / static_cast<T>(counted);
  const T loss = total * inv;
  if (!std::isfinite(loss)) throw NumericError("cross_entropy produced a non-finite loss");
  return make_result<T>("cross_entropy", Shape{1}, std::vector<T>{loss}, {&logits},
                        [labels, ignore_index, batch, classes, plane, inv,
                         prob = std::move(prob)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const T up = self.grad[0] * inv;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::int32_t label = labels[b * plane + i];
        if (ignore_index && label == *ignore_index) continue;
        for (std::size_t k = 0; k < classes; ++k) {
          const std::size_t f = b * classes * plane + k * plane + i;
          const T target = static_cast<std::size_t>(label) == k ? T(1) : T(0);
          g[f] += up * (prob[f] - target);
        }
      }
    }
  });
}

#define CINFORMER_INSTANTIATE(T)                                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,           \
                               std::size_t, std::size_t, const std::string&);                  \
  template Tensor<T> group_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                   std::size_t, double);                                       \
  template Tensor<T> upsample<T>(const Tensor<T>&, std::size_t, Upsample);                     \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<std::int32_t>&,      \
                                      std::optional<std::int32_t>);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer::ad
