#pragma once

// Window multi-head self-attention and variance-ranked Top-K self-attention.
// Both return the additive update for the residual stream, not x + update.

#include <cstdint>
#include <span>
#include <vector>

#include "cinformer/layers.hpp"
#include "cinformer/token_map.hpp"

namespace cinformer {

/// Ranked token and channel indexes of one sample's queries. Indexes are in
/// descending variance order; equal variances keep ascending index order.
struct TopKSelection {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> channels;
  std::vector<double> token_variances;    // all N tokens, population variance over channels
  std::vector<double> channel_variances;  // all C channels, population variance over tokens
};

/// Selection for one sample given its queries q[N,C] (row-major).
template <class T>
TopKSelection compute_selection(std::span<const T> q, std::size_t tokens, std::size_t channels,
                                std::size_t k_tokens, std::size_t k_channels);

/// Per-sample selection for q[B,N,C].
template <class T>
std::vector<TopKSelection> compute_selection(const Tensor<T>& q, std::size_t k_tokens,
                                             std::size_t k_channels);

struct TopKOptions {
  std::size_t k_tokens = 1;
  std::size_t k_channels = 1;
  TopKVariant variant = TopKVariant::kFullKey;
  // Test hook: replaces the constraint vector with ones.
  bool unit_gate = false;
};

/// Optional side outputs for inspection and tests.
template <class T>
struct AttentionTrace {
  std::vector<TopKSelection> selections;
  std::vector<Tensor<T>> probabilities;  // softmax outputs
  std::vector<Tensor<T>> gates;          // constraint vectors (Top-K only)
};

void add_topk_attention_layout(ParamLayout& layout, const std::string& path, std::size_t channels);
void add_window_attention_layout(ParamLayout& layout, const std::string& path, std::size_t channels);

/// Global single-head Top-K attention over x (already normalized):
///   Q,K,V = xWq, xWk, xWv; (T,J) ranked on Q; S = Q[T,J] K'^T / sqrt(C);
///   A = softmax(S); Ac = sigmoid(layernorm(mean_queries(S))) * gamma;
///   Z' = (A with key columns scaled by Ac) V'; update = scatter(Z') Wo.
/// full-key keeps all N keys/values (channel-restricted); selected-key
/// restricts them to T as well.
template <class T>
Tensor<T> topk_attention(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& x,
                         const TopKOptions& options, AttentionTrace<T>* trace = nullptr);

/// Multi-head attention inside non-overlapping window x window tiles.
/// window == 0 means one window covering the whole map.
template <class T>
Tensor<T> window_attention(const ParamStore<T>& ps, const std::string& path, const TokenMap<T>& x,
                           std::size_t heads, std::size_t window, AttentionTrace<T>* trace = nullptr);

enum class AttentionCost { kDenseGlobal, kWindow, kTopKFullKey, kTopKSelectedKey };

/// Analytic FLOPs of one attention sublayer (multiply-add = 2):
///   dense   8NC^2 + 2N^2C + 2N^2C
///   window  8NC^2 + 4N(w^2)C
///   topk    6NC^2 + 2NC^2 (Wo) + 4 k_t N k_c (full-key) or 4 k_t^2 k_c
///           (selected-key) + 2NC per variance pass (two passes)
/// Head count does not change the total.
std::uint64_t flops_of_attention(AttentionCost kind, std::size_t tokens, std::size_t channels,
                                 std::size_t heads, std::size_t window, std::size_t k_tokens,
                                 std::size_t k_channels);

}  // namespace cinformer
