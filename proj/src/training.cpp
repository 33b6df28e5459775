#include "shadowpeft/training.hpp"

#include <cmath>

namespace shadowpeft {
namespace {

std::vector<int32_t> flatten_targets(const IntMatrix& targets) {
  return targets.values;
}

}  // namespace

LossReport joint_lm_loss(Tape* tape, const Tensor& base_logits, const Tensor& shadow_logits,
                         const IntMatrix& targets, int32_t ignore_index, double lambda) {
  if (base_logits.rank() != 3 || shadow_logits.rank() != 3) {
    throw DimensionError("joint_lm_loss: logits must be [B,T,V]");
  }
  const int64_t n = base_logits.dim(0) * base_logits.dim(1);
  const int64_t v = base_logits.dim(2);
  Tensor base_flat = ops::reshape(tape, base_logits, {n, v});
  Tensor shadow_flat = ops::reshape(tape, shadow_logits, {n, shadow_logits.dim(2)});
  const auto flat = flatten_targets(targets);
  Tensor base_ce = ops::cross_entropy(tape, base_flat, flat, ignore_index);
  Tensor shadow_ce = ops::cross_entropy(tape, shadow_flat, flat, ignore_index);

  LossReport report;
  report.total = ops::add_scaled(tape, base_ce, shadow_ce, lambda);
  report.total_value = report.total.item();
  report.base_ce = base_ce.item();
  report.shadow_ce = shadow_ce.item();
  report.lambda = lambda;
  return report;
}

LossReport joint_cls_loss(Tape* tape, const Tensor& base_pooled, const Tensor& shadow_pooled,
                          const Tensor& w_cls, const Tensor& w_cls_shadow,
                          const std::vector<int32_t>& labels, double lambda) {
  const int64_t classes = w_cls.dim(1);
  for (int32_t y : labels) {
    if (y < 0 || y >= classes) {
      throw IndexError("joint_cls_loss: label " + std::to_string(y) + " outside [0," +
                       std::to_string(classes) + ")");
    }
  }
  Tensor base_ce = ops::cross_entropy(tape, ops::matmul(tape, base_pooled, w_cls), labels, -1);
  Tensor shadow_ce =
      ops::cross_entropy(tape, ops::matmul(tape, shadow_pooled, w_cls_shadow), labels, -1);

  LossReport report;
  report.total = ops::add_scaled(tape, base_ce, shadow_ce, lambda);
  report.total_value = report.total.item();
  report.base_ce = base_ce.item();
  report.shadow_ce = shadow_ce.item();
  report.lambda = lambda;
  return report;
}

ParamGroupReport count_trainable(const Model& model) {
  ParamGroupReport r;
  r.injection = model.injection.param_count();
  r.update = model.update.param_count();
  r.shadow_backbone = model.shadow.backbone_param_count();
  r.shadow_heads = model.shadow.head_param_count();
  r.projections = model.shadow.projection_param_count();
  r.total = r.injection + r.update + r.shadow_backbone + r.shadow_heads + r.projections;

  const int64_t refinements = model.cfg.base.layers - 1;
  const int64_t d = model.cfg.base.hidden;
  r.injection_formula = refinements * 2 * d * model.injection.rank;
  if (model.update.enabled) {
    const int64_t per_layer =
        4 * d * model.update.gate_hidden + (model.update.use_layernorm ? 2 * d : 0);
    r.update_formula = refinements * per_layer;
  }

  for (const auto& p : model.trainable_params()) r.enumerated += p.tensor.numel();
  return r;
}

AdamW::AdamW(std::vector<NamedParam> params, double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (auto& p : params_) {
    p.tensor.ensure_grad();
    m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi].tensor;
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double g = p.grad_at(i);
      if (!std::isfinite(g)) {
        throw NumericalError("optimizer: non-finite gradient in tensor '" + params_[pi].name +
                             "' at element " + std::to_string(i));
      }
      auto& m = m_[pi][static_cast<size_t>(i)];
      auto& v = v_[pi][static_cast<size_t>(i)];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p.at(i) -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.at(i));
    }
    p.apply_precision();
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace shadowpeft
