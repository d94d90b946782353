#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cinformer/checkpoint.hpp"
#include "cinformer/model.hpp"
#include "cinformer/profile.hpp"
#include "helpers.hpp"

using namespace cinformer;
using testutil::values;
using Tf = Tensor<float>;
using Td = Tensor<double>;
namespace fs = std::filesystem;

TEST_CASE("cross_entropy: uniform logits, margin limit, ignore index") {
  const Td uniform = Td::zeros({2, 4, 3, 3});
  std::vector<std::int32_t> labels(18);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 4);
  CHECK(std::abs(ad::cross_entropy(uniform, labels).item() - std::log(4.0)) < 1e-6);
  CHECK(std::abs(ad::cross_entropy(Tf::zeros({2, 4, 3, 3}), labels).item() - std::log(4.0)) < 1e-6);
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 80.0}) {
    std::vector<double> v(2 * 3);  // [1,2,1,3]: class 1 is correct everywhere
    for (std::size_t p = 0; p < 3; ++p) v[3 + p] = margin;
    const double loss = ad::cross_entropy(Td::from({1, 2, 1, 3}, v), {1, 1, 1}).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-30);
  // ignored pixels drop out of the mean
  const Td logits = Td::from({1, 2, 1, 2}, {3.0, 0.0, 0.0, 0.0});
  CHECK(ad::cross_entropy(logits, {-1, 1}, std::int32_t{-1}).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("cross_entropy: out-of-range label names the pixel") {
  try {
    ad::cross_entropy(Tf::zeros({1, 2, 2, 3}), {0, 1, 0, 1, 5, 0});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,1)") != std::string::npos);
  }
}

TEST_CASE("cross_entropy: gradient matches central differences") {
  Td x = testutil::noise({2, 3, 2, 2}, 4, -2, 2);
  const std::vector<std::int32_t> labels{0, 1, 2, 1, 2, 2, 0, 0};
  ad::backward(ad::cross_entropy(x, labels));
  for (std::size_t i = 0; i < x.numel(); i += 3) {
    CHECK(testutil::rel_err(x.grad()[i], testutil::fd_grad(x, i, [&] { return ad::cross_entropy(x, labels).item(); })) <
          1e-4);
  }
}

TEST_CASE("adamw: hand-stepped scalar, pure decay, identity, frozen") {
  ParamStore<float> ps;
  ps.add("p", Tf::from({1}, {1.0f}));
  AdamWState st = make_adamw_state(ps);
  ps.get("p").mutable_grad()[0] = 1.0f;
  adamw_step(ps, st, 0.1, 0.0);
  // m_hat = v_hat = 1 -> p = 1 - 0.1 * 1 / (1 + 1e-8)
  CHECK(ps.get("p")[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(st.step == 1);

  ParamStore<float> decay;
  decay.add("p", Tf::from({2}, {2.0f, -4.0f}));
  AdamWState sd = make_adamw_state(decay);
  double expect = 2.0;
  for (int s = 0; s < 5; ++s) {
    decay.zero_grad();
    adamw_step(decay, sd, 0.1, 0.5);
    expect *= 1 - 0.1 * 0.5;
  }
  CHECK(decay.get("p")[0] == doctest::Approx(expect).epsilon(1e-6));

  ParamStore<float> still;
  still.add("p", Tf::from({3}, {0.3f, -7.0f, 1e-3f}));
  const auto before = values(still.get("p"));
  AdamWState ss = make_adamw_state(still);
  for (int s = 0; s < 10; ++s) adamw_step(still, ss, 0.01, 0.0);
  CHECK(values(still.get("p")) == before);

  ParamStore<float> frozen;
  frozen.add("f", Tf::from({2}, {1.5f, 2.5f}), false);
  frozen.add("t", Tf::from({1}, {1.0f}));
  AdamWState sf = make_adamw_state(frozen);
  for (int s = 0; s < 100; ++s) {
    frozen.get("t").mutable_grad()[0] = 1.0f;
    adamw_step(frozen, sf, 0.1, 0.1);
  }
  CHECK(values(frozen.get("f")) == std::vector<float>{1.5f, 2.5f});
}

TEST_CASE("adamw: state drift is a state error") {
  ParamStore<float> ps;
  ps.add("p", Tf::from({2}, {1, 2}));
  AdamWState st = make_adamw_state(ps);
  ParamStore<float> other;
  other.add("p", Tf::from({3}, {1, 2, 3}));
  CHECK_THROWS_AS(adamw_step(other, st, 0.1, 0.0), StateError);
  ParamStore<float> more;
  more.add("p", Tf::from({2}, {1, 2}));
  more.add("q", Tf::from({1}, {1}));
  CHECK_THROWS_AS(adamw_step(more, st, 0.1, 0.0), StateError);
}

TEST_CASE("lr_schedule: warmup boundary, end, midpoint, monotone warmup") {
  const double base = 7.5e-4, lo = 7.5e-6;
  CHECK(lr_schedule(100, 1000, 100, base, lo) == doctest::Approx(base).epsilon(1e-12));
  CHECK(lr_schedule(1000, 1000, 100, base, lo) == doctest::Approx(lo).epsilon(1e-12));
  CHECK(lr_schedule(550, 1000, 100, base, lo) == doctest::Approx((base + lo) / 2).epsilon(1e-12));
  CHECK(lr_schedule(0, 1000, 100, base, lo) == 0.0);
  CHECK(lr_schedule(50, 1000, 100, base, lo) == doctest::Approx(base / 2).epsilon(1e-12));
  CHECK(lr_schedule(0, 10, 0, base, lo) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("miou: identity, hand-counted 2x2, disjoint, zero-union exclusion") {
  CHECK(miou({0, 1, 2, 2}, {0, 1, 2, 2}, 4).miou == 1.0);
  const MetricReport r = miou({0, 1, 1, 1}, {0, 1, 0, 1}, 2);
  CHECK(std::abs(r.per_class_iou[0] - 0.5) < 1e-12);
  CHECK(std::abs(r.per_class_iou[1] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(r.miou - 7.0 / 12.0) < 1e-9);
  CHECK(r.pixel_accuracy == 0.75);
  // confusion rows sum to ground-truth counts
  CHECK(r.confusion == std::vector<std::uint64_t>{1, 1, 0, 2});
  const MetricReport d = miou({1, 1}, {0, 0}, 3);
  CHECK(d.per_class_iou[1] == 0.0);
  CHECK(std::isnan(d.per_class_iou[2]));
  CHECK(d.miou == 0.0);
  CHECK_THROWS_AS(miou({0, 1}, {0}, 2), DataError);
  CHECK(r.to_json().find("\"miou\"") != std::string::npos);
  CHECK(d.to_json().find("null") != std::string::npos);
}

TEST_CASE("miou: consistent relabeling permutes per-class IoU and keeps the mean") {
  SeededRng rng(3);
  std::vector<std::int32_t> p(200), g(200);
  for (std::size_t i = 0; i < 200; ++i) {
    p[i] = static_cast<std::int32_t>(rng.below(4));
    g[i] = rng.uniform() < 0.6 ? p[i] : static_cast<std::int32_t>(rng.below(4));
  }
  const std::int32_t perm[4] = {2, 0, 3, 1};
  auto relabel = [&](std::vector<std::int32_t> v) {
    for (auto& x : v) x = perm[x];
    return v;
  };
  const MetricReport a = miou(p, g, 4);
  const MetricReport b = miou(relabel(p), relabel(g), 4);
  CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-15));
  for (int c = 0; c < 4; ++c) CHECK(a.per_class_iou[c] == b.per_class_iou[perm[c]]);
}

TEST_CASE("profile: parameter count equals the store, linear and two-layer hand totals") {
  const ModelConfig mc;
  const profile::Profile p = profile::profile(mc);
  SeededRng rng(0);
  const ParamStore<float> ps = init_model_params(mc, rng);
  CHECK(p.total.params == ps.scalar_count());
  for (const char* c : {"stem", "fpn", "encoder", "decoder", "head"}) {
    CHECK(p.components.at(c).params == ps.scalar_count(std::string(c) + "."));
  }
  // head: 1x1 conv C1 -> classes, with bias
  CHECK(p.components.at("head").params == mc.stage_widths[0] * mc.num_classes + mc.num_classes);

  ParamLayout l;
  nn::add_linear(l, "a", 5, 7, true);
  nn::add_linear(l, "b", 7, 2, true);
  SeededRng r2(1);
  const ParamStore<float> two = init_params(l, r2);
  CHECK(two.scalar_count() == 5 * 7 + 7 + 7 * 2 + 2);
  profile::FlopCounter::Session session;
  nn::linear(two, "b", nn::linear(two, "a", Tf::zeros({3, 5})));
  CHECK(session.total() == 2 * 3 * 5 * 7 + 2 * 3 * 7 * 2);
}

TEST_CASE("profile: top-k in stages 3-4 costs fewer FLOPs than dense global") {
  ModelConfig dense;
  dense.attention.kinds[2] = dense.attention.kinds[3] = AttentionKind::kGlobal;
  ModelConfig topk;
  const auto pd = profile::profile(dense);
  const auto pt = profile::profile(topk);
  CHECK(pt.total.flops < pd.total.flops);
  // a top-k block drops the four projection biases and adds gamma
  CHECK(pt.total.params + 2 * (4 * 128 - 1) + 2 * (4 * 256 - 1) == pd.total.params);
}
