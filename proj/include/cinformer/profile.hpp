#pragma once

// Analytic parameter and FLOP accounting. Layers report their cost while a
// FlopCounter session is open; a multiply-add counts as 2 FLOPs. Only
// convolutions, linear maps, attention and normalization are counted:
//   conv     2 * Cout * Hout * Wout * Cin * k * k
//   linear   2 * rows * Cin * Cout
//   norm     5 per element, plus 2 per element for an affine
//   attention  see flops_of_attention

#include <cstdint>
#include <map>
#include <string>

#include "cinformer/config.hpp"

namespace cinformer::profile {

inline constexpr std::uint64_t kNormFlopsPerElement = 5;
inline constexpr std::uint64_t kAffineFlopsPerElement = 2;

class FlopCounter {
 public:
  /// Counts everything reported on this thread while alive.
  class Session {
   public:
    Session() : previous_(state().active) {
      state().active = true;
      state().totals.clear();
    }
    ~Session() { state().active = previous_; }
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;
    const std::map<std::string, std::uint64_t>& totals() const { return state().totals; }
    std::uint64_t total() const {
      std::uint64_t t = 0;
      for (const auto& [_, v] : state().totals) t += v;
      return t;
    }

   private:
    bool previous_;
  };

  /// Labels reports made while alive with a component name.
  class Component {
   public:
    explicit Component(std::string name) : previous_(state().component) {
      state().component = std::move(name);
    }
    ~Component() { state().component = previous_; }
    Component(const Component&) = delete;
    Component& operator=(const Component&) = delete;

   private:
    std::string previous_;
  };

  static void add(std::uint64_t flops) {
    auto& s = state();
    if (s.active) s.totals[s.component] += flops;
  }

 private:
  struct State {
    bool active = false;
    std::string component = "other";
    std::map<std::string, std::uint64_t> totals;
  };
  static State& state() {
    static thread_local State s;
    return s;
  }
};

struct ComponentCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct Profile {
  std::map<std::string, ComponentCost> components;  // stem, fpn, encoder, decoder, head
  ComponentCost total;
};

/// Exact parameter count and one-image forward FLOPs at the configured input size.
Profile profile(const ModelConfig& config);

/// FLOPs of the attention stage-level sublayers in `stage` (0-based) only.
std::uint64_t attention_flops(const ModelConfig& config, std::size_t stage);

}  // namespace cinformer::profile
