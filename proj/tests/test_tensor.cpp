#include <doctest.h>

#include <cmath>

#include "cinformer/errors.hpp"
#include "cinformer/ops.hpp"

using namespace cinformer;
using ad::Tensor;
using Tf = Tensor<float>;
using Td = Tensor<double>;

namespace {
std::vector<float> vals(const Tf& t) { return {t.data().begin(), t.data().end()}; }
std::vector<float> grads(const Tf& t) { return {t.grad().begin(), t.grad().end()}; }
}  // namespace

TEST_CASE("matmul: identity and hand-computed product") {
  const Tf eye = Tf::from({2, 2}, {1, 0, 0, 1});
  CHECK(vals(ad::matmul(eye, eye)) == std::vector<float>{1, 0, 0, 1});
  const Tf a = Tf::from({2, 2}, {1, 2, 3, 4});
  const Tf b = Tf::from({2, 1}, {1, 1});
  const Tf c = ad::matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(vals(c) == std::vector<float>{3, 7});
}

TEST_CASE("matmul: gradient of sum(A B) wrt A is ones * B^T") {
  Tf a = Tf::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tf b = Tf::from({3, 2}, {1, -1, 2, 0.5f, -3, 4}, true);
  ad::backward(ad::sum_all(ad::matmul(a, b)));
  // row sums of B: 0, 2.5, 1
  CHECK(grads(a) == std::vector<float>{0, 2.5f, 1, 0, 2.5f, 1});
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  const Tf a = Tf::zeros({2, 3});
  const Tf b = Tf::zeros({2, 2});
  try {
    ad::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("elementwise: definitions") {
  CHECK(ad::sigmoid(Tf::scalar(0)).item() == doctest::Approx(0.5));
  const Tf r = ad::relu(Tf::from({2}, {-3, 3}));
  CHECK(vals(r) == std::vector<float>{0, 3});
  // tanh-approximate gelu at 1
  const double g = 0.5 * (1 + std::tanh(ad::kGeluC * (1 + 0.044715)));
  CHECK(ad::gelu(Td::scalar(1.0)).item() == doctest::Approx(g).epsilon(1e-12));
}

TEST_CASE("elementwise: sigmoid derivative at 0 matches a central difference") {
  Td x = Td::scalar(0.0, true);
  ad::backward(ad::sigmoid(x));
  const double h = 1e-3;
  const double fd = (ad::sigmoid(Td::scalar(h)).item() - ad::sigmoid(Td::scalar(-h)).item()) / (2 * h);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(fd == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("elementwise: domain errors") {
  CHECK_THROWS_AS(ad::log(Tf::scalar(-1)), NumericError);
  CHECK_THROWS_AS(ad::sqrt(Tf::scalar(-1)), NumericError);
  CHECK_THROWS_AS(ad::div(Tf::scalar(1), Tf::scalar(0)), NumericError);
}

TEST_CASE("elementwise: trailing broadcast and its gradient") {
  Tf a = Tf::from({2, 2}, {1, 2, 3, 4}, true);
  Tf b = Tf::from({2}, {10, 20}, true);
  const Tf c = ad::add(a, b);
  CHECK(vals(c) == std::vector<float>{11, 22, 13, 24});
  ad::backward(ad::sum_all(c));
  CHECK(grads(b) == std::vector<float>{2, 2});
  CHECK_THROWS_AS(ad::add(a, Tf::zeros({3})), DimensionError);
}

TEST_CASE("reduce: population variance, mean, max ties") {
  CHECK(ad::variance(Tf::from({2}, {1, -1}), 0).item() == 1.0f);
  CHECK(ad::variance(Tf::full({5}, 3.25f), 0).item() == 0.0f);
  CHECK(vals(ad::mean(Tf::from({2, 2}, {1, 3, 5, 7}), -1)) == std::vector<float>{2, 6});
  const Tf t = Tf::from({4}, {2, 5, 5, 1});
  CHECK(ad::argmax(t, 0) == std::vector<std::size_t>{1});
  CHECK(ad::max(t, 0).item() == 5.0f);
  // variance is invariant to permutation
  CHECK(ad::variance(Tf::from({4}, {1, 2, 3, 10}), 0).item() ==
        ad::variance(Tf::from({4}, {10, 3, 1, 2}), 0).item());
}

TEST_CASE("reduce: max gradient goes to the lower tied index") {
  Tf x = Tf::from({3}, {4, 4, 1}, true);
  ad::backward(ad::sum_all(ad::max(x, 0)));
  CHECK(grads(x) == std::vector<float>{1, 0, 0});
}

TEST_CASE("softmax: uniform, stabilized, closed form") {
  CHECK(vals(ad::softmax(Tf::zeros({4}), 0)) == std::vector<float>{0.25f, 0.25f, 0.25f, 0.25f});
  const Tf big = ad::softmax(Tf::from({2}, {1000, 1000}), 0);
  CHECK(vals(big) == std::vector<float>{0.5f, 0.5f});
  const Td s = ad::softmax(Td::from({2}, {0.0, std::log(3.0)}), 0);
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax: rows sum to one and stay positive") {
  std::vector<float> v(60);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<float>(i) * 1.7f) * 20.0f;
  const Tf s = ad::softmax(Tf::from({6, 10}, v), -1);
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 10; ++c) {
      CHECK(s[r * 10 + c] > 0.0f);
      total += s[r * 10 + c];
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("layernorm: constant, closed form, zero mean") {
  CHECK(vals(ad::layernorm(Tf::full({4}, 7.0f), 0)) == std::vector<float>{0, 0, 0, 0});
  const Td y = ad::layernorm(Td::from({2}, {0.0, 2.0}), 0);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(y[1] < 1.0);
  std::vector<float> v(32);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(static_cast<float>(i * i)) * 3.0f + 1.0f;
  const Tf z = ad::layernorm(Tf::from({4, 8}, v), -1);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0;
    for (std::size_t c = 0; c < 8; ++c) m += z[r * 8 + c];
    CHECK(std::abs(m / 8) < 1e-6);
  }
}

TEST_CASE("gather/scatter: identity, hand indexing, zeros elsewhere") {
  const Tf x = Tf::from({2, 2}, {1, 2, 3, 4});
  CHECK(vals(ad::gather(x, {{{0, 1}, {0, 1}}})) == std::vector<float>{1, 2, 3, 4});
  const Tf g = ad::gather(x, {{{1}, {0}}});
  CHECK(vals(g) == std::vector<float>{3});
  const Tf s = ad::scatter_add(g, {{{1}, {0}}}, 2, 2);
  CHECK(vals(s) == std::vector<float>{0, 0, 3, 0});
}

TEST_CASE("gather/scatter: scatter of gather restores selected positions") {
  std::vector<float> v(3 * 5 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) + 0.5f;
  const Tf x = Tf::from({3, 5, 4}, v);
  const std::vector<ad::RowColIndex> idx{{{4, 0}, {1, 3}}, {{2, 3}, {0, 2}}, {{0, 1}, {2, 3}}};
  const Tf back = ad::scatter_add(ad::gather(x, idx), idx, 5, 4);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        const bool sel = std::count(idx[b].rows.begin(), idx[b].rows.end(), r) &&
                         std::count(idx[b].cols.begin(), idx[b].cols.end(), c);
        const std::size_t i = (b * 5 + r) * 4 + c;
        CHECK(back[i] == (sel ? x[i] : 0.0f));
      }
    }
  }
}

TEST_CASE("gather/scatter: bad indexes") {
  const Tf x = Tf::zeros({2, 2});
  CHECK_THROWS_AS(ad::gather(x, {{{2}, {0}}}), IndexError);
  CHECK_THROWS_AS(ad::gather(x, {{{0, 0}, {0}}}), IndexError);
}

TEST_CASE("backward: sums, squares, fan-out accumulation") {
  Tf x = Tf::from({3}, {1, 2, 3}, true);
  ad::backward(ad::sum_all(x));
  CHECK(grads(x) == std::vector<float>{1, 1, 1});
  Tf y = Tf::from({1}, {3}, true);
  ad::backward(ad::sum_all(ad::mul(y, y)));
  CHECK(y.grad()[0] == 6.0f);
  Tf z = Tf::from({1}, {2}, true);
  const Tf w = ad::add(ad::mul(z, z), ad::scale(z, 3.0));
  ad::backward(ad::sum_all(w));
  CHECK(z.grad()[0] == 7.0f);
}

TEST_CASE("backward: detached or non-scalar loss is a usage error") {
  const Tf x = Tf::from({2}, {1, 2});
  CHECK_THROWS_AS(ad::backward(ad::sum_all(x)), UsageError);
  Tf y = Tf::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(ad::backward(ad::mul(y, y)), UsageError);
}

TEST_CASE("backward: bit-deterministic across repeats") {
  std::vector<float> v(64);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<float>(i) * 0.37f);
  auto run = [&] {
    Tf x = Tf::from({8, 8}, v, true);
    ad::backward(ad::sum_all(ad::softmax(ad::matmul(x, ad::transpose(x)), -1)));
    return grads(x);
  };
  CHECK(run() == run());
}

TEST_CASE("tensor: invariants") {
  CHECK_THROWS(Tf::from({2, 2}, {1, 2, 3}));
  CHECK_THROWS_AS(ad::exp(Tf::scalar(1000)), NumericError);
}
