#pragma once

#include <cstdint>

#include "shadowpeft/tensor.hpp"

namespace shadowpeft {

/// Per-forward instrumentation. In attached mode a full pass performs exactly
/// one embedding call, L base-layer calls, L_s shadow-layer calls and L-1
/// injection/update calls; detached mode performs zero base-layer calls.
struct ForwardTrace {
  int64_t embedding_calls = 0;
  int64_t base_layer_calls = 0;
  int64_t shadow_layer_calls = 0;
  int64_t injection_calls = 0;
  int64_t update_calls = 0;

  bool keep_snapshots = false;
  std::vector<Tensor> h_out_snapshots;  // h_out per base layer
  std::vector<Tensor> s_snapshots;      // shadow state after each update
};

}  // namespace shadowpeft
