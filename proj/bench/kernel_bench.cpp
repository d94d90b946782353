// Serial reference kernels vs the OpenMP kernels: wall time and agreement.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include <omp.h>

#include "cinformer/kernels.hpp"

namespace k = cinformer::kernels;

namespace {

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

std::vector<float> noise(std::size_t n, std::mt19937& gen) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = d(gen);
  return v;
}

void report(const std::string& name, double serial, double parallel, bool same) {
  std::printf("%-28s %10.3f %10.3f %8.2fx  %s\n", name.c_str(), serial * 1e3, parallel * 1e3, serial / parallel,
              same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
  std::mt19937 gen(1);
  std::printf("threads %d, best of %d\n", omp_get_max_threads(), reps);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");
  bool ok = true;

  for (std::size_t n : {64, 256, 512}) {
    const auto a = noise(n * n, gen);
    const auto b = noise(n * n, gen);
    std::vector<float> cs(n * n), cp(n * n);
    const double ts = best_of(reps, [&] { k::serial::gemm(n, n, n, a.data(), b.data(), cs.data(), false); });
    const double tp = best_of(reps, [&] { k::parallel::gemm(n, n, n, a.data(), b.data(), cp.data(), false); });
    const bool same = std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(float)) == 0;
    ok = ok && same;
    report("gemm " + std::to_string(n) + "^3", ts, tp, same);
  }

  for (auto [c, hw, kernel, stride] : {std::array<std::size_t, 4>{64, 32, 3, 1}, {128, 16, 3, 2}, {32, 64, 1, 1}}) {
    const k::ConvGeometry g{c, hw, hw, kernel, stride, kernel / 2};
    const auto image = noise(c * hw * hw, gen);
    const std::size_t cols = g.patch_size() * g.out_height() * g.out_width();
    std::vector<float> cs(cols), cp(cols);
    const double ts = best_of(reps, [&] { k::serial::im2col(g, image.data(), cs.data()); });
    const double tp = best_of(reps, [&] { k::parallel::im2col(g, image.data(), cp.data()); });
    bool same = std::memcmp(cs.data(), cp.data(), cols * sizeof(float)) == 0;
    const std::string shape = std::to_string(c) + "x" + std::to_string(hw) + "^2 k" + std::to_string(kernel) + " s" +
                              std::to_string(stride);
    report("im2col " + shape, ts, tp, same);
    std::vector<float> is(image.size()), ip(image.size());
    const double ts2 = best_of(reps, [&] {
      std::fill(is.begin(), is.end(), 0.0f);
      k::serial::col2im(g, cs.data(), is.data());
    });
    const double tp2 = best_of(reps, [&] {
      std::fill(ip.begin(), ip.end(), 0.0f);
      k::parallel::col2im(g, cs.data(), ip.data());
    });
    const bool same2 = std::memcmp(is.data(), ip.data(), is.size() * sizeof(float)) == 0;
    report("col2im " + shape, ts2, tp2, same2);
    ok = ok && same && same2;
  }
  return ok ? 0 : 1;
}
