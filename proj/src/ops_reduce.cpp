#include <cmath>
#include <string>

#include "cinformer/ops.hpp"

namespace cinformer::ad {
namespace {

// View of a tensor as [outer, n, inner] around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
  Shape reduced;  // shape with the axis removed ({1} if nothing is left)

  std::size_t at(std::size_t o, std::size_t i, std::size_t in) const { return (o * n + i) * inner + in; }
};

AxisView view_of(const Shape& shape, int axis) {
  const int r = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
  }
  AxisView v;
  for (int i = 0; i < r; ++i) {
    if (i < a) v.outer *= shape[static_cast<std::size_t>(i)];
    if (i > a) v.inner *= shape[static_cast<std::size_t>(i)];
    if (i != a) v.reduced.push_back(shape[static_cast<std::size_t>(i)]);
  }
  v.n = shape[static_cast<std::size_t>(a)];
  if (v.n == 0) throw DimensionError("reduction over an empty axis of " + to_string(shape));
  if (v.reduced.empty()) v.reduced = {1};
  return v;
}

const char* reduce_name(Reduce kind) {
  switch (kind) {
    case Reduce::kSum: return "sum";
    case Reduce::kMean: return "mean";
    case Reduce::kMax: return "max";
    case Reduce::kVariance: return "variance";
  }
  return "reduce";
}

}  // namespace

template <class T>
std::vector<std::size_t> argmax(const Tensor<T>& x, int axis) {
  const AxisView v = view_of(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<std::size_t> idx(v.outer * v.inner, 0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < v.n; ++i) {
        if (xv[v.at(o, i, in)] > xv[v.at(o, best, in)]) best = i;
      }
      idx[o * v.inner + in] = best;
    }
  }
  return idx;
}

template <class T>
Tensor<T> reduce(Reduce kind, const Tensor<T>& x, int axis) {
  const AxisView v = view_of(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<T> out(v.outer * v.inner);
  std::vector<std::size_t> arg;
  std::vector<T> means;
  const T inv_n = T(1) / static_cast<T>(v.n);
  if (kind == Reduce::kMax) {
    arg = argmax(x, axis);
    std::uint64_t h = 0;
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = xv[v.at(j / v.inner, arg[j], j % v.inner)];
      h = h * 31 + arg[j];
    }
    BranchTrace::record(h);
  } else {
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        T s = T(0);
        for (std::size_t i = 0; i < v.n; ++i) s += xv[v.at(o, i, in)];
        out[o * v.inner + in] = s;
      }
    }
    if (kind != Reduce::kSum) {
      for (T& s : out) s *= inv_n;
    }
    if (kind == Reduce::kVariance) {
      means = out;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const T mu = means[o * v.inner + in];
          T s = T(0);
          for (std::size_t i = 0; i < v.n; ++i) {
            const T d = xv[v.at(o, i, in)] - mu;
            s += d * d;
          }
          out[o * v.inner + in] = s * inv_n;
        }
      }
    }
  }
  return make_result<T>(reduce_name(kind), v.reduced, std::move(out), {&x},
                        [kind, v, arg = std::move(arg), means = std::move(means), inv_n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t j = o * v.inner + in;
        const T up = self.grad[j];
        switch (kind) {
          case Reduce::kSum:
            for (std::size_t i = 0; i < v.n; ++i) g[v.at(o, i, in)] += up;
            break;
          case Reduce::kMean:
            for (std::size_t i = 0; i < v.n; ++i) g[v.at(o, i, in)] += up * inv_n;
            break;
          case Reduce::kMax:
            g[v.at(o, arg[j], in)] += up;
            break;
          case Reduce::kVariance:
            for (std::size_t i = 0; i < v.n; ++i) {
              const std::size_t f = v.at(o, i, in);
              g[f] += up * T(2) * (p.value[f] - means[j]) * inv_n;
            }
            break;
        }
      }
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const AxisView v = view_of(x.shape(), axis);
  const auto& xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      T mx = xv[v.at(o, 0, in)];
      for (std::size_t i = 1; i < v.n; ++i) mx = std::max(mx, xv[v.at(o, i, in)]);
      T s = T(0);
      for (std::size_t i = 0; i < v.n; ++i) {
        const T e = std::exp(xv[v.at(o, i, in)] - mx);
        out[v.at(o, i, in)] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::size_t i = 0; i < v.n; ++i) out[v.at(o, i, in)] *= inv;
    }
  }
  check_finite<T>(out, "softmax");
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [v](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const auto& y = self.value;
    const auto& up = self.grad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        T dot = T(0);
        for (std::size_t i = 0; i < v.n; ++i) dot += up[v.at(o, i, in)] * y[v.at(o, i, in)];
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t f = v.at(o, i, in);
          g[f] += y[f] * (up[f] - dot);
        }
      }
    }
  });
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, int axis, double eps) {
  const AxisView v = view_of(x.shape(), axis);
  const auto& xv = x.values();
  const T inv_n = T(1) / static_cast<T>(v.n);
  std::vector<T> out(xv.size());
  std::vector<T> inv_std(v.outer * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      T s = T(0);
      for (std::size_t i = 0; i < v.n; ++i) s += xv[v.at(o, i, in)];
      const T mu = s * inv_n;
      T q = T(0);
      for (std::size_t i = 0; i < v.n; ++i) {
        const T d = xv[v.at(o, i, in)] - mu;
        q += d * d;
      }
      const T is = T(1) / std::sqrt(q * inv_n + static_cast<T>(eps));
      inv_std[o * v.inner + in] = is;
      for (std::size_t i = 0; i < v.n; ++i) out[v.at(o, i, in)] = (xv[v.at(o, i, in)] - mu) * is;
    }
  }
  return make_result<T>("layernorm", x.shape(), std::move(out), {&x},
                        [v, inv_n, inv_std = std::move(inv_std)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const auto& y = self.value;
    const auto& up = self.grad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        T mean_up = T(0);
        T mean_up_y = T(0);
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t f = v.at(o, i, in);
          mean_up += up[f];
          mean_up_y += up[f] * y[f];
        }
        mean_up *= inv_n;
        mean_up_y *= inv_n;
        const T is = inv_std[o * v.inner + in];
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t f = v.at(o, i, in);
          g[f] += is * (up[f] - mean_up - y[f] * mean_up_y);
        }
      }
    }
  });
}

#define CINFORMER_INSTANTIATE(T)                                                \
  template std::vector<std::size_t> argmax<T>(const Tensor<T>&, int);           \
  template Tensor<T> reduce<T>(Reduce, const Tensor<T>&, int);                  \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                         \
  template Tensor<T> layernorm<T>(const Tensor<T>&, int, double);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer::ad
