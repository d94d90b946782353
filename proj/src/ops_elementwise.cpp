#include <cmath>
#include <string>

#include "cinformer/ops.hpp"

namespace cinformer::ad {
namespace {

const char* unary_name(Unary kind) {
  switch (kind) {
    case Unary::kNeg: return "neg";
    case Unary::kExp: return "exp";
    case Unary::kLog: return "log";
    case Unary::kSqrt: return "sqrt";
    case Unary::kRelu: return "relu";
    case Unary::kGelu: return "gelu";
    case Unary::kSigmoid: return "sigmoid";
  }
  return "unary";
}

const char* binary_name(Binary kind) {
  switch (kind) {
    case Binary::kAdd: return "add";
    case Binary::kSub: return "sub";
    case Binary::kMul: return "mul";
    case Binary::kDiv: return "div";
  }
  return "binary";
}

template <class T>
T sigmoid_of(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// True when `small` can be repeated with period numel(small) to fill `big`.
bool suffix_broadcastable(const Shape& big, const Shape& small) {
  if (numel(small) == 1) return true;
  std::size_t lead = 0;
  while (lead + 1 < small.size() && small[lead] == 1) ++lead;
  const std::size_t r = small.size() - lead;
  if (r > big.size()) return false;
  for (std::size_t i = 0; i < r; ++i) {
    if (small[lead + i] != big[big.size() - r + i]) return false;
  }
  return true;
}

// Visits every output element with the matching flat index of each operand.
// The smaller operand repeats with period equal to its element count.
template <class F>
void broadcast_loop(std::size_t n, std::size_t na, std::size_t nb, F&& f) {
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (na == n) {
    for (std::size_t i = 0; i < n;) {
      for (std::size_t j = 0; j < nb; ++j, ++i) f(i, i, j);
    }
  } else {
    for (std::size_t i = 0; i < n;) {
      for (std::size_t j = 0; j < na; ++j, ++i) f(i, j, i);
    }
  }
}

}  // namespace

template <class T>
Tensor<T> unary(Unary kind, const Tensor<T>& x) {
  const auto& in = x.values();
  std::vector<T> out(in.size());
  switch (kind) {
    case Unary::kNeg:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = -in[i];
      break;
    case Unary::kExp:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::exp(in[i]);
      break;
    case Unary::kLog:
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (!(in[i] > T(0))) {
          throw NumericError("log domain violation at flat index " + std::to_string(i));
        }
        out[i] = std::log(in[i]);
      }
      break;
    case Unary::kSqrt:
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (!(in[i] >= T(0))) {
          throw NumericError("sqrt domain violation at flat index " + std::to_string(i));
        }
        out[i] = std::sqrt(in[i]);
      }
      break;
    case Unary::kRelu: {
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      if (BranchTrace::enabled()) {
        std::uint64_t signs = 0;
        for (T v : in) signs = signs * 31 + (v > T(0) ? 1 : 0);
        BranchTrace::record(signs);
      }
      break;
    }
    case Unary::kGelu:
      for (std::size_t i = 0; i < in.size(); ++i) {
        const T v = in[i];
        const T t = std::tanh(T(kGeluC) * (v + T(0.044715) * v * v * v));
        out[i] = T(0.5) * v * (T(1) + t);
      }
      break;
    case Unary::kSigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_of(in[i]);
      break;
  }
  return make_result<T>(unary_name(kind), x.shape(), std::move(out), {&x}, [kind](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const auto& up = self.grad;
    const auto& xv = p.value;
    const auto& yv = self.value;
    switch (kind) {
      case Unary::kNeg:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= up[i];
        break;
      case Unary::kExp:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * yv[i];
        break;
      case Unary::kLog:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] / xv[i];
        break;
      case Unary::kSqrt:
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (yv[i] == T(0)) throw NumericError("sqrt gradient undefined at zero");
          g[i] += up[i] * T(0.5) / yv[i];
        }
        break;
      case Unary::kRelu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] > T(0)) g[i] += up[i];
        }
        break;
      case Unary::kGelu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T v = xv[i];
          const T inner = T(kGeluC) * (v + T(0.044715) * v * v * v);
          const T t = std::tanh(inner);
          const T dinner = T(kGeluC) * (T(1) + T(3) * T(0.044715) * v * v);
          g[i] += up[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dinner);
        }
        break;
      case Unary::kSigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i] * yv[i] * (T(1) - yv[i]);
        break;
    }
  });
}

template <class T>
Tensor<T> binary(Binary kind, const Tensor<T>& a, const Tensor<T>& b) {
  const bool a_big = a.numel() >= b.numel();
  const Tensor<T>& big = a_big ? a : b;
  const Tensor<T>& small = a_big ? b : a;
  if (!suffix_broadcastable(big.shape(), small.shape())) {
    throw DimensionError(std::string(binary_name(kind)) + ": shapes " + to_string(a.shape()) +
                         " and " + to_string(b.shape()) + " are not broadcastable");
  }
  const std::size_t n = big.numel();
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(n);
  switch (kind) {
    case Binary::kAdd:
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = av[ia] + bv[ib];
      });
      break;
    case Binary::kSub:
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = av[ia] - bv[ib];
      });
      break;
    case Binary::kMul:
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        out[i] = av[ia] * bv[ib];
      });
      break;
    case Binary::kDiv:
      broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if (bv[ib] == T(0)) {
          throw NumericError("division by zero at flat index " + std::to_string(i));
        }
        out[i] = av[ia] / bv[ib];
      });
      break;
  }
  return make_result<T>(binary_name(kind), big.shape(), std::move(out), {&a, &b},
                        [kind, n](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const std::size_t na = pa.value.size();
    const std::size_t nb = pb.value.size();
    const auto& up = self.grad;
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      switch (kind) {
        case Binary::kAdd:
        case Binary::kSub:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t) {
            g[ia] += up[i];
          });
          break;
        case Binary::kMul:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            g[ia] += up[i] * pb.value[ib];
          });
          break;
        case Binary::kDiv:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            g[ia] += up[i] / pb.value[ib];
          });
          break;
      }
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      switch (kind) {
        case Binary::kAdd:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t, std::size_t ib) {
            g[ib] += up[i];
          });
          break;
        case Binary::kSub:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t, std::size_t ib) {
            g[ib] -= up[i];
          });
          break;
        case Binary::kMul:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            g[ib] += up[i] * pa.value[ia];
          });
          break;
        case Binary::kDiv:
          broadcast_loop(n, na, nb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            const T d = pb.value[ib];
            g[ib] -= up[i] * pa.value[ia] / (d * d);
          });
          break;
      }
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, double s) {
  const T f = static_cast<T>(s);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * f;
  return make_result<T>("scale", x.shape(), std::move(out), {&x}, [f](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f;
  });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return make_result<T>("sum_all", Shape{1}, std::vector<T>{s}, {&x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (T& v : g) v += self.grad[0];
  });
}

#define CINFORMER_INSTANTIATE(T)                                               \
  template Tensor<T> unary<T>(Unary, const Tensor<T>&);                        \
  template Tensor<T> binary<T>(Binary, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> scale<T>(const Tensor<T>&, double);                       \
  template Tensor<T> sum_all<T>(const Tensor<T>&);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer::ad
