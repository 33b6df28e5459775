#pragma once

#include "shadowpeft/shadow.hpp"

namespace shadowpeft {

/// Per-layer weights of the gated shadow update: two bias-free two-layer MLPs
/// (transform and gate) plus the shared LayerNorm applied to the base output.
struct UpdateLayerParams {
  Tensor t1, t2;  // [d, h_g], [h_g, d]
  Tensor g1, g2;
  Tensor ln_gamma, ln_beta;  // present iff the shared LayerNorm is enabled
};

/// Advances the shadow state from the base layer output via a GRU-style gated
/// interpolation. Disabled mode (ablation) leaves the state untouched while
/// still advancing the cursor.
class UpdateModule {
 public:
  bool enabled = true;
  bool use_layernorm = true;
  int64_t gate_hidden = 0;
  double dropout_rate = 0.0;
  double ln_eps = 1e-5;
  std::vector<UpdateLayerParams> layers;  // index l-1 holds layer l

  static UpdateModule init(int64_t base_layers, int64_t hidden, int64_t gate_hidden,
                           double dropout_rate, bool enabled, bool use_layernorm, double ln_eps,
                           const RngFactory& rng, DType dtype);

  /// Shared LayerNorm of the base output; feeds both transform and gate.
  Tensor normalize_base_output(Tape* tape, const Tensor& h_out, int64_t layer) const;
  /// t = W_T2 Dropout(SiLU(z W_T1)).
  Tensor transform(Tape* tape, const Tensor& z, int64_t layer, Mode mode, const RngFactory& rng,
                   int64_t step) const;
  /// g = sigmoid(W_G2 SiLU(z W_G1)); no dropout anywhere in the gate path.
  Tensor gate(Tape* tape, const Tensor& z, int64_t layer) const;
  /// s = (1 - g) * s_prev + g * t, elementwise; guaranteed to stay inside
  /// [min(s_prev, t), max(s_prev, t)] per element.
  static Tensor gated_update(Tape* tape, const Tensor& s_prev, const Tensor& t, const Tensor& g);

  ShadowState step(Tape* tape, const ShadowState& s_prev, const Tensor& h_out, int64_t layer,
                   Mode mode, const RngFactory& rng, int64_t train_step) const;

  int64_t layer_count() const { return static_cast<int64_t>(layers.size()); }
  int64_t param_count() const;
  void set_trainable(bool v);
  void collect_params(std::vector<NamedParam>& out) const;

 private:
  void check_layer(const char* op, int64_t layer) const;
};

}  // namespace shadowpeft
