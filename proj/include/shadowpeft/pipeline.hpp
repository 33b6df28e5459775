#pragma once

#include "shadowpeft/injection.hpp"
#include "shadowpeft/update.hpp"

namespace shadowpeft {

struct AttachedResult {
  Tensor base_hidden;         // final-normed base hidden state [B,T,d]
  Tensor base_lm_logits;      // [B,T,V]
  Tensor shadow_loss_logits;  // [B,T,V], state chosen by shadow_lm_loss_state
  Tensor s0;                  // initial shadow state [B,T,d]
  ShadowState final_state;    // state after the last update step
};

/// The full ShadowPEFT model: frozen base, trainable shadow, injection and
/// update modules. Orchestrates the per-layer loop (inject -> base layer ->
/// update) starting at layer 1; layer 0 always runs on the raw embeddings.
class Model {
 public:
  RunConfig cfg;
  RngFactory rng{0};
  BaseModel base;
  ShadowModel shadow;
  InjectionModule injection;
  UpdateModule update;

  static Model init(const RunConfig& cfg);

  AttachedResult attached_forward(Tape* tape, const IntMatrix& tokens, Mode mode,
                                  int64_t train_step = 0, ForwardTrace* trace = nullptr) const;

  /// Shadow-only path: shared embedding, shadow backbone, projection, head.
  /// Touches no base decoder layer.
  Tensor detached_state(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace = nullptr) const;
  Tensor detached_lm_logits(Tape* tape, const IntMatrix& tokens,
                            ForwardTrace* trace = nullptr) const;

  /// Hidden state at each sequence's last unpadded position ("last" mode) or
  /// the mean over unpadded positions ("mean" mode). mask is [B*T] row-major,
  /// nonzero = real token; every row needs at least one.
  Tensor pool(Tape* tape, const Tensor& h, const std::vector<uint8_t>& pad_mask) const;

  std::vector<NamedParam> named_params() const;
  std::vector<NamedParam> trainable_params() const;
  void freeze_base() { base.set_trainable(false); }
};

/// Last-unpadded-position indices for a [B,T] mask; throws on an empty row.
std::vector<int64_t> last_token_indices(const std::vector<uint8_t>& pad_mask, int64_t batch,
                                        int64_t seq);

}  // namespace shadowpeft
