#pragma once

#include "shadowpeft/backbone.hpp"

namespace shadowpeft {

/// The per-layer parallel representation. Always base-width after projection.
struct ShadowState {
  Tensor s;  // [B, T, d]
  int64_t layer_cursor = 0;
};

/// Derives the implicit shadow dimensions from the base configuration.
/// layers = max(1, round(layer_fraction * L)); hidden is rounded to a
/// multiple of the (proportionally scaled) head count.
ShadowConfig derive_implicit_config(const BaseConfig& base, double layer_fraction,
                                    double width_fraction);

/// The trainable shadow backbone. Consumes the base model's embedding output
/// (no embedding table of its own), runs L_s decoder layers at width d_s, and
/// projects back to base width when d_s != d.
class ShadowModel {
 public:
  ShadowConfig cfg;
  int64_t base_hidden = 0;
  double ln_eps = 1e-5;
  std::vector<DecoderLayerParams> layers;
  Tensor w_in;    // [d, d_s], present iff d_s != d
  Tensor w_proj;  // [d_s, d], present iff d_s != d
  /// LM head applied to the width-d (post-projection) state. Owned and
  /// trainable in implicit/explicit mode; aliases the frozen base head in
  /// cross-scale composition (owns_head == false, not registered here).
  Tensor w_head;
  bool owns_head = true;
  Tensor w_cls_shadow;  // [d, C], a trainable copy of the base classifier head

  static ShadowModel init(const ShadowConfig& cfg, const BaseModel& base, const RngFactory& rng,
                          DType dtype);

  /// Runs w_in (if present), the shadow decoder layers with causal masking,
  /// then w_proj (if present); returns s^(0) at width d. With zero-weight
  /// layers and matching widths this is the identity on x_embeds.
  ShadowState init_state(Tape* tape, const Tensor& x_embeds, ForwardTrace* trace = nullptr) const;

  Tensor lm_logits(Tape* tape, const Tensor& s) const;          // width-d state -> [.., V]
  Tensor cls_logits(Tape* tape, const Tensor& pooled) const;    // [B, d] -> [B, C]

  void set_trainable(bool v);
  void collect_params(std::vector<NamedParam>& out) const;  // names under "shadow."
  int64_t backbone_param_count() const;                     // decoder layers
  int64_t projection_param_count() const;                   // w_in + w_proj
  int64_t head_param_count() const;                         // owned heads only
};

}  // namespace shadowpeft
