#pragma once

#include "shadowpeft/pipeline.hpp"

namespace shadowpeft {

struct LossReport {
  Tensor total;  // scalar, on the tape
  double total_value = 0.0;
  double base_ce = 0.0;
  double shadow_ce = 0.0;
  double lambda = 0.0;
  int64_t step = 0;
  int64_t trainable_param_count = 0;
};

/// total = CE(base_logits, y) + lambda * CE(shadow_logits, y), both terms over
/// the identical shifted target positions.
LossReport joint_lm_loss(Tape* tape, const Tensor& base_logits, const Tensor& shadow_logits,
                         const IntMatrix& targets, int32_t ignore_index, double lambda);

/// total = CE(base_pooled W_cls, y) + lambda * CE(shadow_pooled W_cls_shadow, y).
LossReport joint_cls_loss(Tape* tape, const Tensor& base_pooled, const Tensor& shadow_pooled,
                          const Tensor& w_cls, const Tensor& w_cls_shadow,
                          const std::vector<int32_t>& labels, double lambda);

struct ParamGroupReport {
  int64_t injection = 0;
  int64_t update = 0;
  int64_t shadow_backbone = 0;
  int64_t shadow_heads = 0;
  int64_t projections = 0;
  int64_t total = 0;
  // closed-form values the enumerated groups must match
  int64_t injection_formula = 0;
  int64_t update_formula = 0;
  int64_t enumerated = 0;  // brute-force sum over requires_grad tensors
};

/// Per-group trainable counts plus the closed-form formulas:
/// injection (L-1)*2*d*r, update (L-1)*(4*d*h_g + [2*d if layernorm]).
ParamGroupReport count_trainable(const Model& model);

/// Adaptive-moment optimizer with decoupled weight decay, applied to the
/// given (trainable) tensors only. Moments persist across steps.
class AdamW {
 public:
  AdamW(std::vector<NamedParam> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8, double weight_decay = 0.0);

  /// Applies one update from the accumulated gradients. Throws
  /// NumericalError naming the tensor on a non-finite gradient.
  void step();
  void zero_grad();
  int64_t step_count() const { return t_; }
  const std::vector<NamedParam>& params() const { return params_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

}  // namespace shadowpeft
