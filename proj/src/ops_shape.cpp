#include <numeric>
#include <string>

#include "cinformer/kernels.hpp"
#include "cinformer/ops.hpp"

namespace cinformer::ad {
namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
  }
  return static_cast<std::size_t>(a);
}

std::size_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

void check_index_set(const std::vector<std::size_t>& idx, std::size_t bound, const char* what) {
  std::vector<bool> seen(bound, false);
  for (std::size_t i : idx) {
    if (i >= bound) {
      throw IndexError(std::string(what) + " index " + std::to_string(i) + " out of range [0," +
                       std::to_string(bound) + ")");
    }
    if (seen[i]) throw IndexError(std::string(what) + " index " + std::to_string(i) + " repeated");
    seen[i] = true;
  }
}

}  // namespace

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t p = b.dim(-1);
  const std::size_t batch_a = a.numel() / (m * k);
  const std::size_t batch_b = b.numel() / (k * p);
  const bool batch_ok = batch_a == batch_b ? (a.rank() == b.rank() || batch_a == 1)
                                           : (b.rank() == 2 || a.rank() == 2);
  if (b.dim(-2) != k || !batch_ok) {
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Shape out_shape = batch_a >= batch_b ? a.shape() : b.shape();
  out_shape[out_shape.size() - 2] = m;
  out_shape[out_shape.size() - 1] = p;
  const std::size_t batch = std::max(batch_a, batch_b);
  std::vector<T> out(batch * m * p);
  const T* av = a.values().data();
  const T* bv = b.values().data();
  if (batch_b == 1) {
    // Shared right operand: one tall product.
    kernels::gemm(batch_a * m, p, k, av, bv, out.data(), false);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      const T* ai = av + (batch_a == 1 ? 0 : i * m * k);
      kernels::gemm(m, p, k, ai, bv + i * k * p, out.data() + i * m * p, false);
    }
  }
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {&a, &b},
                        [m, k, p, batch, batch_a, batch_b](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const T* up = self.grad.data();
    if (pa.requires_grad) {
      T* ga = pa.grad_buffer().data();
      if (batch_b == 1) {
        kernels::gemm_nt(batch_a * m, k, p, up, pb.value.data(), ga, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          T* gi = ga + (batch_a == 1 ? 0 : i * m * k);
          kernels::gemm_nt(m, k, p, up + i * m * p, pb.value.data() + i * k * p, gi, true);
        }
      }
    }
    if (pb.requires_grad) {
      T* gb = pb.grad_buffer().data();
      if (batch_b == 1) {
        kernels::gemm_tn(k, p, batch_a * m, pa.value.data(), up, gb, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          const T* ai = pa.value.data() + (batch_a == 1 ? 0 : i * m * k);
          kernels::gemm_tn(k, p, m, ai, up + i * m * p, gb + i * k * p, true);
        }
      }
    }
  });
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r) throw DimensionError("permute order rank mismatch for " + to_string(x.shape()));
  std::vector<bool> used(r, false);
  for (std::size_t o : order) {
    if (o >= r || used[o]) throw DimensionError("permute order is not a permutation");
    used[o] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[order[i]];
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in[i];
  // Source flat offset of each output element, shared by forward and backward.
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += counter[i] * in_strides[order[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<T> out(src.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {&x},
                        [src = std::move(src)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t r = x.rank();
  const std::size_t rows = x.dim(-2);
  const std::size_t cols = x.dim(-1);
  const std::size_t batch = x.numel() / (rows * cols);
  Shape out_shape = x.shape();
  std::swap(out_shape[r - 2], out_shape[r - 1]);
  std::vector<T> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    kernels::transpose(rows, cols, x.values().data() + b * rows * cols, out.data() + b * rows * cols);
  }
  return make_result<T>("transpose", std::move(out_shape), std::move(out), {&x},
                        [rows, cols, batch](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    std::vector<T> tmp(rows * cols);
    for (std::size_t b = 0; b < batch; ++b) {
      kernels::transpose(cols, rows, self.grad.data() + b * rows * cols, tmp.data());
      T* gb = g.data() + b * rows * cols;
      for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return make_result<T>("reshape", std::move(shape), x.values(), {&x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    }
    out_shape[ax] += s[ax];
  }
  const std::size_t outer = product(first, 0, ax);
  const std::size_t inner = product(first, ax + 1, first.size());
  const std::size_t out_row = out_shape[ax] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t row = t.dim(static_cast<int>(ax)) * inner;
    const auto& v = t.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(o * row),
                v.begin() + static_cast<std::ptrdiff_t>((o + 1) * row),
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row + off));
    }
    off += row;
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [outer, out_row, offsets](Node<T>& self) {
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node<T>& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      const std::size_t row = g.size() / outer;
      for (std::size_t o = 0; o < outer; ++o) {
        const T* src = self.grad.data() + o * out_row + offsets[pi];
        T* dst = g.data() + o * row;
        for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
      }
    }
  });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
  if (length == 0 || start + length > x.shape()[ax]) {
    throw IndexError("slice [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") out of range for axis " + std::to_string(ax) + " of " + to_string(x.shape()));
  }
  const std::size_t outer = product(x.shape(), 0, ax);
  const std::size_t inner = product(x.shape(), ax + 1, x.rank());
  const std::size_t in_row = x.shape()[ax] * inner;
  const std::size_t out_row = length * inner;
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  std::vector<T> out(outer * out_row);
  const auto& v = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(o * in_row + start * inner),
              v.begin() + static_cast<std::ptrdiff_t>(o * in_row + start * inner + out_row),
              out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {&x},
                        [outer, in_row, out_row, begin = start * inner](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < out_row; ++i) g[o * in_row + begin + i] += self.grad[o * out_row + i];
    }
  });
}

template <class T>
Tensor<T> gather(const Tensor<T>& x, const std::vector<RowColIndex>& index) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("gather expects [N,C] or [B,N,C], got " + to_string(x.shape()));
  }
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t n = x.dim(-2);
  const std::size_t c = x.dim(-1);
  if (index.size() != batch) {
    throw IndexError("gather: " + std::to_string(index.size()) + " index sets for batch " +
                     std::to_string(batch));
  }
  const std::size_t r = index.front().rows.size();
  const std::size_t k = index.front().cols.size();
  if (r == 0 || k == 0) throw IndexError("gather: empty index set");
  for (const auto& ix : index) {
    if (ix.rows.size() != r || ix.cols.size() != k) {
      throw IndexError("gather: index sets differ in size across the batch");
    }
    check_index_set(ix.rows, n, "row");
    check_index_set(ix.cols, c, "column");
  }
  std::vector<T> out(batch * r * k);
  const auto& v = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      const T* src = v.data() + (b * n + index[b].rows[i]) * c;
      T* dst = out.data() + (b * r + i) * k;
      for (std::size_t j = 0; j < k; ++j) dst[j] = src[index[b].cols[j]];
    }
  }
  Shape out_shape = x.rank() == 3 ? Shape{batch, r, k} : Shape{r, k};
  return make_result<T>("gather", std::move(out_shape), std::move(out), {&x},
                        [index, n, c, r, k](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < index.size(); ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        T* dst = g.data() + (b * n + index[b].rows[i]) * c;
        const T* src = self.grad.data() + (b * r + i) * k;
        for (std::size_t j = 0; j < k; ++j) dst[index[b].cols[j]] += src[j];
      }
    }
  });
}

template <class T>
Tensor<T> scatter_add(const Tensor<T>& src, const std::vector<RowColIndex>& index,
                      std::size_t rows, std::size_t cols) {
  if (src.rank() != 2 && src.rank() != 3) {
    throw DimensionError("scatter_add expects [r,c] or [B,r,c], got " + to_string(src.shape()));
  }
  const std::size_t batch = src.rank() == 3 ? src.dim(0) : 1;
  const std::size_t r = src.dim(-2);
  const std::size_t k = src.dim(-1);
  if (index.size() != batch) throw IndexError("scatter_add: index count does not match batch");
  for (const auto& ix : index) {
    if (ix.rows.size() != r || ix.cols.size() != k) {
      throw IndexError("scatter_add: index set size does not match source " + to_string(src.shape()));
    }
    check_index_set(ix.rows, rows, "row");
    check_index_set(ix.cols, cols, "column");
  }
  std::vector<T> out(batch * rows * cols, T(0));
  const auto& v = src.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      T* dst = out.data() + (b * rows + index[b].rows[i]) * cols;
      const T* s = v.data() + (b * r + i) * k;
      for (std::size_t j = 0; j < k; ++j) dst[index[b].cols[j]] += s[j];
    }
  }
  Shape out_shape = src.rank() == 3 ? Shape{batch, rows, cols} : Shape{rows, cols};
  return make_result<T>("scatter_add", std::move(out_shape), std::move(out), {&src},
                        [index, rows, cols, r, k](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < index.size(); ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        const T* up = self.grad.data() + (b * rows + index[b].rows[i]) * cols;
        T* dst = g.data() + (b * r + i) * k;
        for (std::size_t j = 0; j < k; ++j) dst[j] += up[index[b].cols[j]];
      }
    }
  });
}

#define CINFORMER_INSTANTIATE(T)                                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                          \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);           \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                           \
  template Tensor<T> slice<T>(const Tensor<T>&, int, std::size_t, std::size_t);               \
  template Tensor<T> gather<T>(const Tensor<T>&, const std::vector<RowColIndex>&);            \
  template Tensor<T> scatter_add<T>(const Tensor<T>&, const std::vector<RowColIndex>&,        \
                                    std::size_t, std::size_t);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer::ad
