#include "cinformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cinformer/profile.hpp"

namespace cinformer {

namespace {

// Indexes sorted by descending score; stable, so ties keep ascending index.
std::vector<std::size_t> rank_descending(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  return order;
}

template <class T>
Tensor<T> proj(const ParamStore<T>& ps, const std::string& path, const Tensor<T>& x) {
  Tensor<T> y = ad::matmul(x, ps.get(path + ".weight"));
  const std::string bias = path + ".bias";
  return ps.contains(bias) ? ad::add(y, ps.get(bias)) : y;
}

}  // namespace

template <class T>
TopKSelection compute_selection(std::span<const T> q, std::size_t tokens, std::size_t channels,
                                std::size_t k_tokens, std::size_t k_channels) {
  if (k_tokens < 1 || k_tokens > tokens) {
    throw ConfigError("k_tokens " + std::to_string(k_tokens) + " outside [1," + std::to_string(tokens) + "]");
  }
  if (k_channels < 1 || k_channels > channels) {
    throw ConfigError("k_channels " + std::to_string(k_channels) + " outside [1," +
                      std::to_string(channels) + "]");
  }
  if (q.size() != tokens * channels) throw DimensionError("compute_selection: query size mismatch");
  TopKSelection sel;
  sel.token_variances.resize(tokens);
  sel.channel_variances.resize(channels);
  const T inv_c = T(1) / static_cast<T>(channels);
  for (std::size_t n = 0; n < tokens; ++n) {
    const T* row = q.data() + n * channels;
    T s = T(0);
    for (std::size_t c = 0; c < channels; ++c) s += row[c];
    const T mu = s * inv_c;
    T v = T(0);
    for (std::size_t c = 0; c < channels; ++c) v += (row[c] - mu) * (row[c] - mu);
    sel.token_variances[n] = static_cast<double>(v * inv_c);
  }
  const T inv_n = T(1) / static_cast<T>(tokens);
  for (std::size_t c = 0; c < channels; ++c) {
    T s = T(0);
    for (std::size_t n = 0; n < tokens; ++n) s += q[n * channels + c];
    const T mu = s * inv_n;
    T v = T(0);
    for (std::size_t n = 0; n < tokens; ++n) {
      const T d = q[n * channels + c] - mu;
      v += d * d;
    }
    sel.channel_variances[c] = static_cast<double>(v * inv_n);
  }
  sel.tokens = rank_descending(sel.token_variances, k_tokens);
  sel.channels = rank_descending(sel.channel_variances, k_channels);
  if (ad::BranchTrace::enabled()) {
    for (std::size_t t : sel.tokens) ad::BranchTrace::record(t);
    for (std::size_t c : sel.channels) ad::BranchTrace::record(c + (std::uint64_t{1} << 32));
  }
  return sel;
}

template <class T>
std::vector<TopKSelection> compute_selection(const Tensor<T>& q, std::size_t k_tokens,
                                             std::size_t k_channels) {
  if (q.rank() != 3) throw DimensionError("compute_selection expects [B,N,C], got " + to_string(q.shape()));
  const std::size_t n = q.dim(1);
  const std::size_t c = q.dim(2);
  std::vector<TopKSelection> out;
  for (std::size_t b = 0; b < q.dim(0); ++b) {
    out.push_back(compute_selection<T>(q.data().subspan(b * n * c, n * c), n, c, k_tokens, k_channels));
  }
  return out;
}

void add_topk_attention_layout(ParamLayout& layout, const std::string& path, std::size_t channels) {
  for (const char* name : {".wq", ".wk", ".wv", ".wo"}) {
    nn::add_linear(layout, path + name, channels, channels, false);
  }
  layout.push_back({path + ".gamma", {1}, InitKind::kOnes, 1});
}

void add_window_attention_layout(ParamLayout& layout, const std::string& path, std::size_t channels) {
  for (const char* name : {".wq", ".wk", ".wv", ".wo"}) {
    nn::add_linear(layout, path + name, channels, channels, true);
  }
}

template <class T>
Tensor<T> topk_attention(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& x,
                         const TopKOptions& options, AttentionTrace<T>* trace) {
  const std::size_t batch = x.batch();
  const std::size_t n = x.tokens();
  const std::size_t c = x.channels();
  const bool full_key = options.variant == TopKVariant::kFullKey;
  profile::FlopCounter::add(batch * flops_of_attention(full_key ? AttentionCost::kTopKFullKey
                                                                : AttentionCost::kTopKSelectedKey,
                                                       n, c, 1, 0, options.k_tokens, options.k_channels));

  const Tensor<T> q = proj(ps, path + ".wq", x.values);
  const Tensor<T> k = proj(ps, path + ".wk", x.values);
  const Tensor<T> v = proj(ps, path + ".wv", x.values);
  std::vector<TopKSelection> selections;
  {
    ad::NoGradGuard no_grad;
    selections = compute_selection(q, options.k_tokens, options.k_channels);
  }
  const Tensor<T>& gamma = ps.get(path + ".gamma");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(c));
  const std::vector<std::size_t> all_tokens = ad::iota_indices(n);

  std::vector<Tensor<T>> updates;
  std::vector<ad::RowColIndex> scatter_index;
  updates.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const TopKSelection& sel = selections[b];
    const std::vector<ad::RowColIndex> q_index{{sel.tokens, sel.channels}};
    const std::vector<ad::RowColIndex> kv_index{{full_key ? all_tokens : sel.tokens, sel.channels}};
    auto sample = [&](const Tensor<T>& t) { return ad::reshape(ad::slice(t, 0, b, 1), {n, c}); };
    const Tensor<T> q_sel = ad::gather(sample(q), q_index);   // [k_t, k_c]
    const Tensor<T> k_sel = ad::gather(sample(k), kv_index);  // [M, k_c]
    const Tensor<T> v_sel = ad::gather(sample(v), kv_index);  // [M, k_c]
    const Tensor<T> scores = ad::scale(ad::matmul(q_sel, ad::transpose(k_sel)), inv_scale);  // [k_t, M]
    Tensor<T> attn;
    try {
      attn = ad::softmax(scores, -1);
    } catch (const NumericError& e) {
      throw NumericError(path + ": " + e.what());
    }
    Tensor<T> gate;
    if (options.unit_gate) {
      gate = Tensor<T>::full({scores.dim(1)}, T(1));
    } else {
      gate = ad::mul(ad::sigmoid(ad::layernorm(ad::mean(scores, 0), -1)), gamma);  // [M]
    }
    const Tensor<T> z = ad::matmul(ad::mul(attn, gate), v_sel);  // [k_t, k_c]
    updates.push_back(ad::reshape(ad::scatter_add(z, q_index, n, c), {1, n, c}));
    if (trace != nullptr) {
      trace->selections.push_back(sel);
      trace->probabilities.push_back(attn);
      trace->gates.push_back(gate);
    }
  }
  const Tensor<T> scattered = batch == 1 ? updates.front() : ad::concat(updates, 0);
  return ad::matmul(scattered, ps.get(path + ".wo.weight"));
}

template <class T>
Tensor<T> window_attention(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& x,
                           std::size_t heads, std::size_t window, AttentionTrace<T>* trace) {
  const std::size_t batch = x.batch();
  const std::size_t c = x.channels();
  const std::size_t h = x.height;
  const std::size_t w = x.width;
  const std::size_t wh = window == 0 ? h : std::min(window, h);
  const std::size_t ww = window == 0 ? w : std::min(window, w);
  if (h % wh != 0 || w % ww != 0) {
    throw DimensionError(path + ": token grid " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by window " + std::to_string(wh) + "x" + std::to_string(ww));
  }
  if (heads == 0 || c % heads != 0) {
    throw DimensionError(path + ": width " + std::to_string(c) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t d = c / heads;
  const std::size_t hb = h / wh;
  const std::size_t wb = w / ww;
  const std::size_t per_window = wh * ww;
  profile::FlopCounter::add(batch * flops_of_attention(window == 0 ? AttentionCost::kDenseGlobal
                                                                   : AttentionCost::kWindow,
                                                       x.tokens(), c, heads, wh, 0, 0));

  // [B, hb, wh, wb, ww, heads, d] -> [B, hb, wb, heads, wh, ww, d]
  auto split = [&](const Tensor<T>& t) {
    Tensor<T> r = ad::reshape(t, {batch, hb, wh, wb, ww, heads, d});
    r = ad::permute(r, {0, 1, 3, 5, 2, 4, 6});
    return ad::reshape(r, {batch * hb * wb * heads, per_window, d});
  };
  const Tensor<T> q = split(proj(ps, path + ".wq", x.values));
  const Tensor<T> k = split(proj(ps, path + ".wk", x.values));
  const Tensor<T> v = split(proj(ps, path + ".wv", x.values));
  const Tensor<T> scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor<T> attn;
  try {
    attn = ad::softmax(scores, -1);
  } catch (const NumericError& e) {
    throw NumericError(path + ": " + e.what());
  }
  if (trace != nullptr) trace->probabilities.push_back(attn);
  Tensor<T> o = ad::matmul(attn, v);
  o = ad::reshape(o, {batch, hb, wb, heads, wh, ww, d});
  o = ad::permute(o, {0, 1, 4, 2, 5, 3, 6});
  o = ad::reshape(o, {batch, h * w, c});
  return proj(ps, path + ".wo", o);
}

std::uint64_t flops_of_attention(AttentionCost kind, std::size_t tokens, std::size_t channels,
                                 std::size_t heads, std::size_t window, std::size_t k_tokens,
                                 std::size_t k_channels) {
  (void)heads;
  const std::uint64_t n = tokens;
  const std::uint64_t c = channels;
  const std::uint64_t projection = 2 * n * c * c;
  switch (kind) {
    case AttentionCost::kDenseGlobal:
      return 4 * projection + 2 * n * n * c + 2 * n * n * c;
    case AttentionCost::kWindow: {
      const std::uint64_t per_window = static_cast<std::uint64_t>(window) * window;
      return 4 * projection + 2 * n * per_window * c + 2 * n * per_window * c;
    }
    case AttentionCost::kTopKFullKey:
    case AttentionCost::kTopKSelectedKey: {
      const std::uint64_t kt = k_tokens;
      const std::uint64_t kc = k_channels;
      const std::uint64_t keys = kind == AttentionCost::kTopKFullKey ? n : kt;
      const std::uint64_t selection = 2 * (2 * n * c);
      return 3 * projection + 2 * kt * keys * kc + 2 * kt * keys * kc + projection + selection;
    }
  }
  return 0;
}

#define CINFORMER_INSTANTIATE(T)                                                                    \
  template TopKSelection compute_selection<T>(std::span<const T>, std::size_t, std::size_t,         \
                                              std::size_t, std::size_t);                            \
  template std::vector<TopKSelection> compute_selection<T>(const Tensor<T>&, std::size_t,           \
                                                           std::size_t);                            \
  template Tensor<T> topk_attention<T>(const ParamStore<T>&, const std::string&, const TokenMap<T>&, \
                                       const TopKOptions&, AttentionTrace<T>*);                     \
  template Tensor<T> window_attention<T>(const ParamStore<T>&, const std::string&,                  \
                                         const TokenMap<T>&, std::size_t, std::size_t,              \
                                         AttentionTrace<T>*);

CINFORMER_INSTANTIATE(float)
CINFORMER_INSTANTIATE(double)
#undef CINFORMER_INSTANTIATE

}  // namespace cinformer
