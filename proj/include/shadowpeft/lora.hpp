#pragma once

#include "shadowpeft/config.hpp"
#include "shadowpeft/backbone.hpp"

namespace shadowpeft {

/// Minimal LoRA baseline on the same frozen base: rank-r adapters on the
/// q and v projections of every layer, zero-initialized B so training starts
/// from the frozen base exactly.
class LoraModel {
 public:
  RunConfig cfg;
  RngFactory rng{0};
  BaseModel base;
  std::vector<LoraHook> hooks;  // one per base layer
  int64_t rank = 0;

  /// rank_override > 0 replaces cfg.lora_rank (budget matching).
  static LoraModel init(const RunConfig& cfg, int64_t rank_override = 0);

  Tensor forward_hidden(Tape* tape, const IntMatrix& tokens, Mode mode, int64_t train_step = 0,
                        ForwardTrace* trace = nullptr) const;
  Tensor lm_logits(Tape* tape, const Tensor& h) const { return base.lm_logits(tape, h); }
  Tensor cls_logits(Tape* tape, const Tensor& pooled) const {
    return base.cls_logits(tape, pooled);
  }

  std::vector<NamedParam> named_params() const;  // base.* plus lora.L{l}.*
  std::vector<NamedParam> trainable_params() const;
  int64_t adapter_param_count() const;
};

/// Trainable parameters of a rank-r LoRA on q+v of every layer: L*2*(2*d*r).
int64_t lora_count_for_rank(const BaseConfig& base, int64_t rank);

struct BudgetMatch {
  int64_t rank = 0;
  int64_t lora_count = 0;
  int64_t shadow_count = 0;
  double relative_gap = 0.0;  // (shadow - lora) / shadow
};

/// Largest rank whose LoRA count does not exceed shadow_count. Throws
/// ConfigError when even rank 1 exceeds the budget.
BudgetMatch match_budget(int64_t shadow_count, const BaseConfig& base);

}  // namespace shadowpeft
