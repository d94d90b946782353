#pragma once

// Dense inner loops. `serial` holds the straightforward reference kernels;
// `parallel` holds the OpenMP kernels used by the tensor ops. Both accumulate
// every output element in ascending reduction-index order, so they agree
// bit-for-bit and the result does not depend on the thread count.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace cinformer::kernels {

/// Geometry of one 2-D cross-correlation over a single image.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t patch_size() const { return channels * kernel * kernel; }
};

namespace serial {

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

template <class T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj, ++row) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            col[row * oh * ow + y * ow + x] =
                inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                               static_cast<std::size_t>(ix)]
                       : T(0);
          }
        }
      }
    }
  }
}

// Adds the columns back into the image gradient (adjoint of im2col).
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* image) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj, ++row) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                ix >= static_cast<long>(g.width)) {
              continue;
            }
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += col[row * oh * ow + y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace serial

namespace parallel {

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t kTile = 32;
#pragma omp parallel for schedule(static)
  for (std::size_t ib = 0; ib < rows; ib += kTile) {
    for (std::size_t jb = 0; jb < cols; jb += kTile) {
      const std::size_t ie = std::min(rows, ib + kTile);
      const std::size_t je = std::min(cols, jb + kTile);
      for (std::size_t i = ib; i < ie; ++i) {
        for (std::size_t j = jb; j < je; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

// C[M,N] (+)= A[M,K] * B[K,N]. Rows of C are split across threads; each row
// is built by axpy sweeps over B in ascending k, column-blocked for cache.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  constexpr std::size_t kColBlock = 256;
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t jb = 0; jb < n; jb += kColBlock) {
    const std::size_t je = std::min(n, jb + kColBlock);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
      T* __restrict crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* __restrict brow = b + p * n;
        for (std::size_t j = jb; j < je; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C[M,N] (+)= A[M,K] * B^T where B is stored [N,K].
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b_nk, T* c,
             bool accumulate) {
  std::vector<T> bt(n * k);
  transpose(n, k, b_nk, bt.data());
  gemm(m, n, k, a, bt.data(), c, accumulate);
}

// C[M,N] (+)= A^T * B where A is stored [K,M].
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a_km, const T* b, T* c,
             bool accumulate) {
  std::vector<T> at(m * k);
  transpose(k, m, a_km, at.data());
  gemm(m, n, k, at.data(), b, c, accumulate);
}

template <class T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        T* out = col + (c * kk + ki * g.kernel + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
          T* orow = out + y * ow;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(orow, orow + ow, T(0));
            continue;
          }
          const T* irow = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
            orow[x] = (ix >= 0 && ix < static_cast<long>(g.width))
                          ? irow[static_cast<std::size_t>(ix)]
                          : T(0);
          }
        }
      }
    }
  }
}

// Channels are independent, so splitting them across threads keeps the
// per-pixel accumulation order identical to the serial kernel.
template <class T>
void col2im(const ConvGeometry& g, const T* col, T* image) {
  const std::size_t oh = g.out_height();
  const std::size_t ow = g.out_width();
  const std::size_t kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const T* in = col + (c * kk + ki * g.kernel + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* irow = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            irow[static_cast<std::size_t>(ix)] += in[y * ow + x];
          }
        }
      }
    }
  }
}

}  // namespace parallel

using parallel::col2im;
using parallel::gemm;
using parallel::gemm_nt;
using parallel::gemm_tn;
using parallel::im2col;
using parallel::transpose;

}  // namespace cinformer::kernels
