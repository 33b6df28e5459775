#pragma once

#include "shadowpeft/pipeline.hpp"
#include "shadowpeft/tasks.hpp"

namespace shadowpeft {

/// Bridge between a donor shadow's hidden width d_s and the base width d_t,
/// initialized so the composed head W_lm P approximates the donor's own head.
struct ProjectionInit {
  Tensor p;  // [d_t, d_s]: column-vector convention, logits = W_lm (P h)
  double w_lm_norm = 0.0;
  double w_ref_norm = 0.0;
  double residual = 0.0;  // ||W_lm P - W_ref||_F
};

/// P* = pinv(W_lm) W_ref. Heads are given as [V, d_t] and [V, d_s]; the
/// shared vocabulary must match and V >= d_t (overdetermined regime).
ProjectionInit pinv_init_projection(const Tensor& w_lm, const Tensor& w_lm_ref,
                                    double rcond = 1e-12);

/// Composes a ShadowPEFT model from a frozen base and an independently
/// trained donor LM: the donor's decoder stack becomes the shadow backbone,
/// the bridge P becomes the state projection, and the detached LM head path
/// is W_lm P (the frozen base head applied to projected states).
/// init is "pinv" or "random".
Model attach_explicit_shadow(const RunConfig& cfg, const BaseModel& frozen_base,
                             const BaseModel& donor, const std::string& init);

struct PretrainOutcome {
  double start_ce = 0.0;
  double final_ce = 0.0;
  std::vector<double> ce_history;
};

/// Continues training the shadow backbone and the bridge (W_in, P) with the
/// causal LM objective on the detached path; the base model stays untouched.
PretrainOutcome shadow_pretrain(Model& composed, const SyntheticTask& corpus, int64_t steps,
                                double lr, int64_t batch_size);

}  // namespace shadowpeft
