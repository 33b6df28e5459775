#include "shadowpeft/pipeline.hpp"

namespace shadowpeft {

Model Model::init(const RunConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.rng = RngFactory(cfg.seed);
  const DType dtype = cfg.dtype();
  m.base = BaseModel::init(cfg.base, m.rng, dtype);
  ShadowConfig shadow_cfg = cfg.shadow;
  if (cfg.shadow.mode == "implicit") {
    shadow_cfg = derive_implicit_config(cfg.base, cfg.shadow.layer_fraction,
                                        cfg.shadow.width_fraction);
  }
  m.shadow = ShadowModel::init(shadow_cfg, m.base, m.rng, dtype);
  m.injection = InjectionModule::init(cfg.base.layers, cfg.base.hidden, cfg.inject_rank,
                                      cfg.inject_alpha, cfg.inject_sigma, cfg.inject_dropout,
                                      m.rng, dtype);
  m.update = UpdateModule::init(cfg.base.layers, cfg.base.hidden, cfg.update_gate_hidden,
                                cfg.update_dropout, cfg.update_enabled, cfg.update_layernorm,
                                cfg.base.ln_eps, m.rng, dtype);
  m.base.set_trainable(false);
  m.shadow.set_trainable(true);
  m.injection.set_trainable(true);
  m.update.set_trainable(true);
  return m;
}

AttachedResult Model::attached_forward(Tape* tape, const IntMatrix& tokens, Mode mode,
                                       int64_t train_step, ForwardTrace* trace) const {
  Tensor embeds = base.embed(tape, tokens, trace);

  // s^(0) from the shadow backbone on the shared embeddings
  ShadowState state = shadow.init_state(tape, embeds, trace);
  Tensor s0 = state.s;

  // layer 0 runs on the raw embeddings, no injection
  Tensor h_out = base.layer_forward(tape, embeds, 0, trace);
  if (trace && trace->keep_snapshots) trace->h_out_snapshots.push_back(h_out);

  for (int64_t layer = 1; layer < cfg.base.layers; ++layer) {
    // injection consumes s^(layer-1); the cursor enforces the sequencing
    if (state.layer_cursor != layer - 1) {
      throw SequencingError("attached_forward: cursor " + std::to_string(state.layer_cursor) +
                            " at layer " + std::to_string(layer));
    }
    Tensor delta = InjectionModule::compute_delta(tape, h_out, state.s);
    Tensor delta_tilde = injection.bottleneck(tape, delta, layer, mode, rng, train_step);
    Tensor h_in = injection.inject(tape, h_out, delta_tilde);
    if (trace) ++trace->injection_calls;

    h_out = base.layer_forward(tape, h_in, layer, trace);
    if (trace && trace->keep_snapshots) trace->h_out_snapshots.push_back(h_out);

    state = update.step(tape, state, h_out, layer, mode, rng, train_step);
    if (trace) ++trace->update_calls;
    if (trace && trace->keep_snapshots) trace->s_snapshots.push_back(state.s);
  }

  AttachedResult result;
  result.base_hidden = base.final_norm(tape, h_out);
  result.base_lm_logits = base.lm_logits(tape, result.base_hidden);
  result.s0 = s0;
  result.final_state = state;
  // the loop's last update yields the state indexed L-1 here (zero-based
  // layers); the classification loss pools exactly this final state
  const Tensor& loss_state = cfg.shadow_lm_loss_state == "final" ? state.s : s0;
  result.shadow_loss_logits = shadow.lm_logits(tape, loss_state);
  return result;
}

Tensor Model::detached_state(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace) const {
  Tensor embeds = base.embed(tape, tokens, trace);
  return shadow.init_state(tape, embeds, trace).s;
}

Tensor Model::detached_lm_logits(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace) const {
  return shadow.lm_logits(tape, detached_state(tape, tokens, trace));
}

std::vector<int64_t> last_token_indices(const std::vector<uint8_t>& pad_mask, int64_t batch,
                                        int64_t seq) {
  if (static_cast<int64_t>(pad_mask.size()) != batch * seq) {
    throw DimensionError("pool: mask size mismatch");
  }
  std::vector<int64_t> idx(static_cast<size_t>(batch), -1);
  for (int64_t r = 0; r < batch; ++r) {
    for (int64_t t = seq - 1; t >= 0; --t) {
      if (pad_mask[static_cast<size_t>(r * seq + t)]) {
        idx[static_cast<size_t>(r)] = t;
        break;
      }
    }
    if (idx[static_cast<size_t>(r)] < 0) {
      throw NumericalError("pool: fully padded row " + std::to_string(r));
    }
  }
  return idx;
}

Tensor Model::pool(Tape* tape, const Tensor& h, const std::vector<uint8_t>& pad_mask) const {
  if (h.rank() != 3) throw DimensionError("pool: expects [B,T,d]");
  if (cfg.pooling == "mean") {
    return ops::mean_rows_masked(tape, h, pad_mask);
  }
  return ops::select_rows(tape, h, last_token_indices(pad_mask, h.dim(0), h.dim(1)));
}

std::vector<NamedParam> Model::named_params() const {
  std::vector<NamedParam> out;
  base.collect_params(out);
  shadow.collect_params(out);
  injection.collect_params(out);
  update.collect_params(out);
  return out;
}

std::vector<NamedParam> Model::trainable_params() const {
  std::vector<NamedParam> out;
  for (auto& p : named_params()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

}  // namespace shadowpeft
