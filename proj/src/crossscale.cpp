#include "shadowpeft/crossscale.hpp"

#include <cmath>

#include "shadowpeft/training.hpp"

namespace shadowpeft {
namespace {

double frob_norm(const Tensor& t) {
  double acc = 0.0;
  for (int64_t i = 0; i < t.numel(); ++i) acc += t.at(i) * t.at(i);
  return std::sqrt(acc);
}

}  // namespace

ProjectionInit pinv_init_projection(const Tensor& w_lm, const Tensor& w_lm_ref, double rcond) {
  if (w_lm.rank() != 2 || w_lm_ref.rank() != 2) {
    throw DimensionError("pinv_init_projection: heads must be [V,d] matrices");
  }
  if (w_lm.dim(0) != w_lm_ref.dim(0)) {
    throw DimensionError("pinv_init_projection: vocabulary mismatch, " +
                         std::to_string(w_lm.dim(0)) + " vs " + std::to_string(w_lm_ref.dim(0)));
  }
  if (w_lm.dim(0) < w_lm.dim(1)) {
    throw DimensionError("pinv_init_projection: needs V >= d_t (got V=" +
                         std::to_string(w_lm.dim(0)) + ", d_t=" + std::to_string(w_lm.dim(1)) +
                         ")");
  }
  ProjectionInit init;
  Tensor w_plus = pinv(w_lm, rcond);                       // [d_t, V]
  init.p = ops::matmul(nullptr, w_plus, w_lm_ref);         // [d_t, d_s]
  Tensor reproj = ops::matmul(nullptr, w_lm, init.p);      // [V, d_s]
  init.residual = frob_norm(ops::sub(nullptr, reproj, w_lm_ref));
  init.w_lm_norm = frob_norm(w_lm);
  init.w_ref_norm = frob_norm(w_lm_ref);
  return init;
}

Model attach_explicit_shadow(const RunConfig& cfg, const BaseModel& frozen_base,
                             const BaseModel& donor, const std::string& init) {
  if (init != "pinv" && init != "random") {
    throw ConfigError("attach_explicit_shadow: init must be 'pinv' or 'random'");
  }
  if (frozen_base.cfg.vocab_size != donor.cfg.vocab_size) {
    throw ConfigError("attach_explicit_shadow: vocabulary mismatch, base " +
                      std::to_string(frozen_base.cfg.vocab_size) + " vs donor " +
                      std::to_string(donor.cfg.vocab_size));
  }
  RunConfig composed_cfg = cfg;
  composed_cfg.base = frozen_base.cfg;
  composed_cfg.shadow.mode = "explicit";
  composed_cfg.shadow.layers = donor.cfg.layers;
  composed_cfg.shadow.hidden = donor.cfg.hidden;
  composed_cfg.shadow.heads = donor.cfg.heads;
  composed_cfg.shadow.mlp_width = donor.cfg.mlp_width;

  Model m = Model::init(composed_cfg);
  m.base = frozen_base;  // shares the frozen tensors
  m.base.set_trainable(false);

  // donor decoder stack becomes the shadow backbone (deep copies, trainable)
  for (size_t l = 0; l < m.shadow.layers.size(); ++l) {
    const auto& src = donor.layers[l];
    auto& dst = m.shadow.layers[l];
    dst.ln1_gamma = src.ln1_gamma.clone();
    dst.ln1_beta = src.ln1_beta.clone();
    dst.wq = src.wq.clone();
    dst.wk = src.wk.clone();
    dst.wv = src.wv.clone();
    dst.wo = src.wo.clone();
    dst.ln2_gamma = src.ln2_gamma.clone();
    dst.ln2_beta = src.ln2_beta.clone();
    dst.w1 = src.w1.clone();
    dst.w2 = src.w2.clone();
  }

  // one bridge serves both the state projection and the detached head path
  const int64_t d_t = frozen_base.cfg.hidden;
  const int64_t d_s = donor.cfg.hidden;

  // The input bridge is plumbing with no counterpart in the donor, so align
  // it the same way the head bridge is aligned: least squares between the
  // stacked token+position tables, mapping base embeddings onto the donor's
  // native input space. Used by both init modes; stays trainable.
  if (m.shadow.w_in.defined()) {
    const int64_t shared_pos = std::min(frozen_base.cfg.max_seq, donor.cfg.max_seq);
    const int64_t rows = frozen_base.cfg.vocab_size + shared_pos;
    Tensor base_tab = Tensor::zeros({rows, d_t});
    Tensor donor_tab = Tensor::zeros({rows, d_s});
    for (int64_t r = 0; r < frozen_base.cfg.vocab_size; ++r) {
      for (int64_t j = 0; j < d_t; ++j) base_tab.at(r * d_t + j) = frozen_base.tok_emb.at(r * d_t + j);
      for (int64_t j = 0; j < d_s; ++j) donor_tab.at(r * d_s + j) = donor.tok_emb.at(r * d_s + j);
    }
    for (int64_t r = 0; r < shared_pos; ++r) {
      const int64_t out_r = frozen_base.cfg.vocab_size + r;
      for (int64_t j = 0; j < d_t; ++j) base_tab.at(out_r * d_t + j) = frozen_base.pos_emb.at(r * d_t + j);
      for (int64_t j = 0; j < d_s; ++j) donor_tab.at(out_r * d_s + j) = donor.pos_emb.at(r * d_s + j);
    }
    m.shadow.w_in = ops::matmul(nullptr, pinv(base_tab), donor_tab);  // [d_t, d_s]
    m.shadow.w_in.set_requires_grad(true);
  }
  if (init == "pinv") {
    Tensor w_lm_cols = ops::transpose_last2(nullptr, frozen_base.w_lm);  // [V, d_t]
    Tensor w_ref_cols = ops::transpose_last2(nullptr, donor.w_lm);       // [V, d_s]
    ProjectionInit proj = pinv_init_projection(w_lm_cols, w_ref_cols);
    m.shadow.w_proj = ops::transpose_last2(nullptr, proj.p);  // [d_s, d_t]
  } else {
    auto stream = m.rng.stream("init/crossscale.random_proj");
    m.shadow.w_proj = randn({d_s, d_t}, stream, 0.02, composed_cfg.dtype());
  }
  m.shadow.w_proj.set_requires_grad(true);

  // detached logits go through the frozen base head: W_lm (P h)
  m.shadow.w_head = m.base.w_lm;
  m.shadow.owns_head = false;
  m.shadow.w_cls_shadow = m.base.w_cls.clone();
  m.shadow.w_cls_shadow.set_requires_grad(true);
  m.shadow.set_trainable(true);
  m.base.set_trainable(false);
  return m;
}

PretrainOutcome shadow_pretrain(Model& composed, const SyntheticTask& corpus, int64_t steps,
                                double lr, int64_t batch_size) {
  if (corpus.is_classification) {
    throw ConfigError("shadow_pretrain: needs a causal LM corpus");
  }
  std::vector<NamedParam> trainables;
  composed.shadow.collect_params(trainables);
  std::erase_if(trainables, [](const NamedParam& p) { return p.name == "shadow.w_cls"; });

  PretrainOutcome outcome;
  {
    Tape tape;
    Batch probe = corpus.sample(composed.rng, "pretrain_eval", 0, batch_size);
    Tensor logits = composed.detached_lm_logits(&tape, probe.tokens);
    Tensor flat = ops::reshape(&tape, logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
    outcome.start_ce =
        ops::cross_entropy(&tape, flat, probe.lm_targets.values, corpus.ignore_index).item();
  }

  AdamW opt(trainables, lr);
  for (int64_t step = 0; step < steps; ++step) {
    Tape tape;
    Batch batch = corpus.sample(composed.rng, "pretrain", step, batch_size);
    Tensor logits = composed.detached_lm_logits(&tape, batch.tokens);
    Tensor flat = ops::reshape(&tape, logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
    Tensor loss = ops::cross_entropy(&tape, flat, batch.lm_targets.values, corpus.ignore_index);
    const double value = loss.item();
    if (value > 1e4) throw NumericalError("shadow_pretrain: diverged at step " + std::to_string(step));
    outcome.ce_history.push_back(value);
    opt.zero_grad();
    tape.backward(loss);
    opt.step();
  }
  {
    Tape tape;
    Batch probe = corpus.sample(composed.rng, "pretrain_eval", 0, batch_size);
    Tensor logits = composed.detached_lm_logits(&tape, probe.tokens);
    Tensor flat = ops::reshape(&tape, logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
    outcome.final_ce =
        ops::cross_entropy(&tape, flat, probe.lm_targets.values, corpus.ignore_index).item();
  }
  return outcome;
}

}  // namespace shadowpeft
