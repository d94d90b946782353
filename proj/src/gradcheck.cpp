#include "cinformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cinformer/model.hpp"

namespace cinformer::gradcheck {

namespace {

using Td = Tensor<double>;

Td random(const Shape& shape, SeededRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Td::from(shape, std::move(v), true);
}

// Values bounded away from zero (ReLU kink).
Td away_from_zero(const Shape& shape, SeededRng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Td::from(shape, std::move(v), true);
}

double weighted_sum(const Td& out, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += out[i] * r[i];
  return s;
}

std::vector<std::size_t> pick(std::size_t n, std::size_t k, SeededRng& rng) {
  std::vector<std::size_t> idx = ad::iota_indices(n);
  if (k >= n) return idx;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Parameters of `layout` in 64-bit with every entry randomized, so that
// zero biases and unit gains do not hide errors.
ParamStore<double> random_params(const ParamLayout& layout, SeededRng& rng) {
  ParamStore<double> store = init_params(layout, rng).cast<double>();
  for (const ParamSpec& spec : layout) {
    if (spec.init == InitKind::kKaimingUniform) continue;
    const double base = spec.init == InitKind::kOnes ? 1.0 : 0.0;
    for (double& x : store.get(spec.path).mutable_data()) x = base + rng.uniform(-0.3, 0.3);
  }
  return store;
}

std::vector<Td> leaves_of(const ParamStore<double>& ps) {
  std::vector<Td> out;
  for (const auto& [_, e] : ps) out.push_back(e.value);
  return out;
}

std::vector<std::string> names_of(const ParamStore<double>& ps) {
  std::vector<std::string> out;
  for (const auto& [path, _] : ps) out.push_back(path);
  return out;
}

}  // namespace

void check(Result& result, const std::vector<Td>& leaves, const LossFn& f, const Options& options, SeededRng& rng,
           std::size_t probes_per_tensor, const std::vector<std::string>& names) {
  std::vector<double> r;
  std::uint64_t base_digest = 0;
  for (Td leaf : leaves) leaf.zero_grad();
  {
    ad::BranchTrace::Scope trace;
    const Td out = f();
    base_digest = ad::BranchTrace::digest();
    r.resize(out.numel());
    for (double& x : r) x = rng.uniform(0.5, 1.5);
    const Td loss = ad::sum_all(ad::mul(out, Td::from(out.shape(), r)));
    ad::backward(loss);
  }
  auto evaluate = [&](std::uint64_t& digest) {
    ad::NoGradGuard no_grad;
    ad::BranchTrace::Scope trace;
    const double v = weighted_sum(f(), r);
    digest = ad::BranchTrace::digest();
    return v;
  };

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Td leaf = leaves[li];
    const std::vector<double> analytic_all =
        leaf.has_grad() ? std::vector<double>(leaf.grad().begin(), leaf.grad().end())
                        : std::vector<double>(leaf.numel(), 0.0);
    std::vector<double> analytic;
    std::vector<double> numeric;
    for (std::size_t i : pick(leaf.numel(), probes_per_tensor, rng)) {
      double& x = leaf.mutable_data()[i];
      const double saved = x;
      std::uint64_t dp = 0;
      std::uint64_t dm = 0;
      x = saved + options.eps;
      const double lp = evaluate(dp);
      x = saved - options.eps;
      const double lm = evaluate(dm);
      x = saved;
      ++result.probes;
      if (dp != base_digest || dm != base_digest) {
        ++result.skipped;
        continue;
      }
      analytic.push_back(analytic_all[i]);
      numeric.push_back((lp - lm) / (2.0 * options.eps));
    }
    double scale = 1e-6;
    for (double a : analytic_all) scale = std::max(scale, std::abs(a));
    double worst = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
      worst = std::max(worst, std::abs(analytic[k] - numeric[k]));
    }
    if (worst / scale >= result.max_rel_error) {
      result.max_rel_error = worst / scale;
      result.worst_leaf = li < names.size() ? names[li] : "input " + std::to_string(li);
    }
  }
  for (Td leaf : leaves) leaf.zero_grad();
}

std::vector<Result> run_suite(const Options& options) {
  std::vector<Result> results;
  SeededRng rng(options.seed);
  std::vector<std::string> names;  // leaf labels set by the current setup

  // Runs `trials` checks; `setup` draws fresh inputs and returns the leaves and loss.
  auto run = [&](const std::string& name, const std::function<std::pair<std::vector<Td>, LossFn>()>& setup,
                 std::size_t trials, std::size_t probes) {
    Result res;
    res.name = name;
    try {
      for (std::size_t t = 0; t < trials; ++t) {
        names.clear();
        auto [leaves, f] = setup();
        check(res, leaves, f, options, rng, probes, names);
      }
      // Probes that cross a ReLU or selection boundary are skipped; at least a
      // quarter must still be compared or the check counts as vacuous.
      res.passed = res.max_rel_error < options.tolerance && 4 * res.skipped <= 3 * res.probes;
    } catch (const std::exception&) {
      res.passed = false;
      res.max_rel_error = std::numeric_limits<double>::infinity();
    }
    results.push_back(res);
  };
  const std::size_t trials = options.trials;
  const std::size_t probes = options.probes_per_tensor;
  using Setup = std::pair<std::vector<Td>, LossFn>;

  auto unary = [&](const std::string& name, ad::Unary kind, double lo, double hi, bool kink) {
    run(name, [&, kind, lo, hi, kink]() -> Setup {
      Td x = kink ? away_from_zero({3, 4}, rng) : random({3, 4}, rng, lo, hi);
      return {{x}, [x, kind] { return ad::unary(kind, x); }};
    }, trials, probes);
  };
  unary("neg", ad::Unary::kNeg, -1, 1, false);
  unary("exp", ad::Unary::kExp, -1, 1, false);
  unary("log", ad::Unary::kLog, 0.5, 2, false);
  unary("sqrt", ad::Unary::kSqrt, 0.5, 2, false);
  unary("relu", ad::Unary::kRelu, -1, 1, true);
  unary("gelu", ad::Unary::kGelu, -2, 2, false);
  unary("sigmoid", ad::Unary::kSigmoid, -2, 2, false);

  auto binary = [&](const std::string& name, ad::Binary kind) {
    run(name, [&, kind]() -> Setup {
      Td a = random({2, 3, 4}, rng);
      Td b = kind == ad::Binary::kDiv ? random({4}, rng, 0.5, 2.0) : random({4}, rng);
      Td c = random({2, 3, 4}, rng, kind == ad::Binary::kDiv ? 0.5 : -1.0, 1.0 + (kind == ad::Binary::kDiv));
      return {{a, b, c}, [a, b, c, kind] {
                return ad::concat<double>({ad::binary(kind, a, b), ad::binary(kind, a, c)}, 0);
              }};
    }, trials, probes);
  };
  binary("add", ad::Binary::kAdd);
  binary("sub", ad::Binary::kSub);
  binary("mul", ad::Binary::kMul);
  binary("div", ad::Binary::kDiv);

  run("matmul", [&]() -> Setup {
    Td a = random({2, 3, 4}, rng), b = random({4, 5}, rng), c = random({2, 4, 2}, rng);
    return {{a, b, c}, [a, b, c] {
              return ad::concat<double>({ad::matmul(a, b), ad::matmul(a, c)}, 2);
            }};
  }, trials, probes);

  auto reduction = [&](const std::string& name, ad::Reduce kind) {
    run(name, [&, kind]() -> Setup {
      Td x = random({3, 4, 5}, rng);
      return {{x}, [x, kind] { return ad::concat<double>({ad::reduce(kind, x, 1), ad::reduce(kind, x, -1)}, 1); }};
    }, trials, probes);
  };
  reduction("sum", ad::Reduce::kSum);
  reduction("mean", ad::Reduce::kMean);
  reduction("max", ad::Reduce::kMax);
  reduction("variance", ad::Reduce::kVariance);

  run("softmax", [&]() -> Setup {
    Td x = random({3, 5}, rng, -2, 2);
    return {{x}, [x] { return ad::concat<double>({ad::softmax(x, -1), ad::softmax(x, 0)}, 0); }};
  }, trials, probes);
  run("layernorm", [&]() -> Setup {
    Td x = random({3, 6}, rng, -2, 2);
    return {{x}, [x] { return ad::layernorm(x, -1); }};
  }, trials, probes);
  run("shape ops", [&]() -> Setup {
    Td x = random({2, 3, 4}, rng), y = random({2, 3, 2}, rng);
    return {{x, y}, [x, y] {
              Td p = ad::permute(ad::concat<double>({x, y}, 2), {2, 0, 1});  // [6,2,3]
              Td s = ad::slice(p, 0, 1, 4);
              return ad::reshape(ad::transpose(s), {4, 6});
            }};
  }, trials, probes);
  run("gather/scatter", [&]() -> Setup {
    Td x = random({2, 6, 5}, rng);
    std::vector<ad::RowColIndex> idx;
    for (int b = 0; b < 2; ++b) idx.push_back({pick(6, 3, rng), pick(5, 2, rng)});
    std::swap(idx[0].rows.front(), idx[0].rows.back());
    return {{x}, [x, idx] {
              Td g = ad::gather(x, idx);
              return ad::add(ad::scatter_add(ad::mul(g, g), idx, 6, 5), x);
            }};
  }, trials, probes);

  auto conv = [&](const std::string& name, std::size_t k, std::size_t stride, std::size_t pad) {
    run(name, [&, k, stride, pad]() -> Setup {
      Td x = random({2, 3, 6, 6}, rng), w = random({4, 3, k, k}, rng), b = random({4}, rng);
      return {{x, w, b}, [x, w, b, stride, pad] { return ad::conv2d(x, w, &b, stride, pad); }};
    }, trials, probes);
  };
  conv("conv2d 3x3", 3, 1, 1);
  conv("conv2d 3x3 stride 2", 3, 2, 1);
  conv("conv2d 1x1", 1, 1, 0);
  run("group_norm", [&]() -> Setup {
    Td x = random({2, 16, 3, 3}, rng), g = random({16}, rng, 0.5, 1.5), b = random({16}, rng);
    return {{x, g, b}, [x, g, b] { return ad::group_norm(x, g, b, 8); }};
  }, trials, probes);
  run("upsample nearest", [&]() -> Setup {
    Td x = random({1, 2, 3, 3}, rng);
    return {{x}, [x] { return ad::upsample(x, 2, ad::Upsample::kNearest); }};
  }, trials, probes);
  run("upsample bilinear", [&]() -> Setup {
    Td x = random({1, 2, 3, 3}, rng);
    return {{x}, [x] { return ad::upsample(x, 4, ad::Upsample::kBilinear); }};
  }, trials, probes);
  run("cross_entropy", [&]() -> Setup {
    Td x = random({2, 3, 3, 3}, rng, -2, 2);
    std::vector<std::int32_t> labels(18);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(3));
    labels[4] = -1;
    return {{x}, [x, labels] { return ad::cross_entropy(x, labels, std::int32_t{-1}); }};
  }, trials, probes);

  // Layers, with every parameter probed.
  // weight_scale < 1 softens attention logits so that central differences
  // at the default step stay well inside the truncation budget.
  auto layer = [&](const std::string& name, const std::function<void(ParamLayout&)>& build, const Shape& in,
                   const std::function<Td(const ParamStore<double>&, const Td&)>& apply, double weight_scale = 1.0) {
    run(name, [&, build, in, apply, weight_scale]() -> Setup {
      ParamLayout layout;
      build(layout);
      auto ps = std::make_shared<ParamStore<double>>(random_params(layout, rng));
      for (const ParamSpec& spec : layout) {
        if (spec.init != InitKind::kKaimingUniform) continue;
        for (double& w : ps->get(spec.path).mutable_data()) w *= weight_scale;
      }
      Td x = random(in, rng);
      std::vector<Td> leaves = leaves_of(*ps);
      leaves.push_back(x);
      names = names_of(*ps);
      names.push_back("input");
      return {leaves, [ps, x, apply] { return apply(*ps, x); }};
    }, trials, probes);
  };
  layer("linear", [](ParamLayout& l) { nn::add_linear(l, "fc", 5, 3, true); }, {2, 4, 5},
        [](const ParamStore<double>& ps, const Td& x) { return nn::linear(ps, "fc", x); });
  layer("layernorm_affine", [](ParamLayout& l) { nn::add_norm(l, "ln", 6); }, {2, 3, 6},
        [](const ParamStore<double>& ps, const Td& x) { return nn::layernorm_affine(ps, "ln", x); });
  layer("residual_basic_block", [](ParamLayout& l) { nn::add_basic_block(l, "blk", 8, 16, 2); }, {1, 8, 4, 4},
        [](const ParamStore<double>& ps, const Td& x) { return nn::residual_basic_block(ps, "blk", x, 2); });

  const std::size_t grid = 4;
  auto tokens = [grid](const Td& x) { return TokenMap<double>{x, grid, grid}; };
  layer("window_attention", [](ParamLayout& l) { add_window_attention_layout(l, "attn", 8); }, {2, 16, 8},
        [tokens](const ParamStore<double>& ps, const Td& x) { return window_attention(ps, "attn", tokens(x), 2, 2); });
  layer("global_attention", [](ParamLayout& l) { add_window_attention_layout(l, "attn", 8); }, {2, 16, 8},
        [tokens](const ParamStore<double>& ps, const Td& x) { return window_attention(ps, "attn", tokens(x), 2, 0); });
  for (TopKVariant variant : {TopKVariant::kFullKey, TopKVariant::kSelectedKey}) {
    layer("topk_attention " + to_string(variant), [](ParamLayout& l) { add_topk_attention_layout(l, "attn", 8); },
          {2, 16, 8}, [tokens, variant](const ParamStore<double>& ps, const Td& x) {
            return topk_attention(ps, "attn", tokens(x), TopKOptions{5, 4, variant, false});
          });
  }
  layer("patch_merge", [](ParamLayout& l) {
          nn::add_norm(l, "m.norm", 32);
          nn::add_linear(l, "m.reduce", 32, 16, false);
        },
        {2, 16, 8}, [tokens](const ParamStore<double>& ps, const Td& x) {
          return patch_merge(ps, "m", tokens(x)).values;
        });
  run("inject", [&]() -> Setup {
    ParamLayout layout;
    nn::add_conv(layout, "inj.conv", 4, 4, 1, true);
    nn::add_linear(layout, "inj.proj", 12, 8, true);
    auto ps = std::make_shared<ParamStore<double>>(random_params(layout, rng));
    Td x = random({2, 16, 8}, rng), r = random({2, 4, 4, 4}, rng);
    std::vector<Td> leaves = leaves_of(*ps);
    leaves.push_back(x);
    leaves.push_back(r);
    return {leaves, [ps, x, r, tokens] { return inject(*ps, "inj", tokens(x), r).values; }};
  }, trials, probes);
  {
    ModelConfig mc = micro_model_config();
    mc.stage_widths[1] = 8;
    mc.attention.k_tokens = 6;
    mc.attention.k_channels = 5;
    for (AttentionKind kind : {AttentionKind::kWindow, AttentionKind::kTopK}) {
      layer("transformer_block " + to_string(kind), [kind](ParamLayout& l) {
              nn::add_norm(l, "b.norm1", 8);
              nn::add_norm(l, "b.norm2", 8);
              nn::add_linear(l, "b.mlp.fc1", 8, 32, true);
              nn::add_linear(l, "b.mlp.fc2", 32, 8, true);
              if (kind == AttentionKind::kTopK) {
                add_topk_attention_layout(l, "b.attn", 8);
              } else {
                add_window_attention_layout(l, "b.attn", 8);
              }
            },
            {2, 16, 8}, [tokens, kind, mc](const ParamStore<double>& ps, const Td& x) {
              return transformer_block(ps, "b", tokens(x), kind, mc, 1).values;
            },
            0.5);
    }
  }

  // End-to-end micro model: 2 classes, 16x16 input, cross-entropy loss.
  run("micro model end-to-end", [&]() -> Setup {
    const ModelConfig mc = micro_model_config();
    auto ps = std::make_shared<ParamStore<double>>(random_params(model_layout(mc), rng));
    Td image = random({2, 3, mc.input_size, mc.input_size}, rng, 0.0, 1.0);
    std::vector<std::int32_t> labels(2 * mc.input_size * mc.input_size);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(mc.num_classes));
    std::vector<Td> leaves = leaves_of(*ps);
    leaves.push_back(image);
    names = names_of(*ps);
    names.push_back("image");
    return {leaves, [ps, image, labels, mc] { return ad::cross_entropy(forward(*ps, image, mc), labels); }};
  }, 1, options.model_probes_per_tensor);

  return results;
}

}  // namespace cinformer::gradcheck
