#include "shadowpeft/update.hpp"

#include <cmath>

namespace shadowpeft {

UpdateModule UpdateModule::init(int64_t base_layers, int64_t hidden, int64_t gate_hidden,
                                double dropout_rate, bool enabled, bool use_layernorm,
                                double ln_eps, const RngFactory& rng, DType dtype) {
  UpdateModule m;
  m.enabled = enabled;
  m.use_layernorm = use_layernorm;
  m.gate_hidden = gate_hidden;
  m.dropout_rate = dropout_rate;
  m.ln_eps = ln_eps;
  if (!enabled) return m;  // zero parameters when disabled
  const double stdev = 0.02;
  for (int64_t l = 1; l < base_layers; ++l) {
    UpdateLayerParams p;
    auto mk = [&](const char* slot, Shape shape) {
      auto stream = rng.stream(std::string("init/update.") + slot, static_cast<uint64_t>(l));
      return randn(std::move(shape), stream, stdev, dtype);
    };
    p.t1 = mk("t1", {hidden, gate_hidden});
    p.t2 = mk("t2", {gate_hidden, hidden});
    p.g1 = mk("g1", {hidden, gate_hidden});
    p.g2 = mk("g2", {gate_hidden, hidden});
    if (use_layernorm) {
      p.ln_gamma = Tensor::full({hidden}, 1.0, dtype);
      p.ln_beta = Tensor::zeros({hidden}, dtype);
    }
    m.layers.push_back(std::move(p));
  }
  return m;
}

void UpdateModule::check_layer(const char* op, int64_t layer) const {
  if (layer < 1 || layer > layer_count()) {
    throw IndexError(std::string(op) + ": layer " + std::to_string(layer) + " outside [1," +
                     std::to_string(layer_count()) + "]");
  }
}

Tensor UpdateModule::normalize_base_output(Tape* tape, const Tensor& h_out, int64_t layer) const {
  check_layer("update normalize", layer);
  if (!use_layernorm) throw ConfigError("update normalize: layernorm disabled by config");
  const auto& p = layers[static_cast<size_t>(layer - 1)];
  return ops::layer_norm(tape, h_out, p.ln_gamma, p.ln_beta, ln_eps);
}

Tensor UpdateModule::transform(Tape* tape, const Tensor& z, int64_t layer, Mode mode,
                               const RngFactory& rng, int64_t step) const {
  check_layer("update transform", layer);
  const auto& p = layers[static_cast<size_t>(layer - 1)];
  Tensor hidden = ops::silu(tape, ops::matmul(tape, z, p.t1));
  auto stream = rng.stream("dropout/update", static_cast<uint64_t>(layer),
                           static_cast<uint64_t>(step));
  Tensor dropped = ops::dropout(tape, hidden, dropout_rate, mode, stream);
  return ops::matmul(tape, dropped, p.t2);
}

Tensor UpdateModule::gate(Tape* tape, const Tensor& z, int64_t layer) const {
  check_layer("update gate", layer);
  const auto& p = layers[static_cast<size_t>(layer - 1)];
  Tensor hidden = ops::silu(tape, ops::matmul(tape, z, p.g1));
  return ops::sigmoid(tape, ops::matmul(tape, hidden, p.g2));
}

Tensor UpdateModule::gated_update(Tape* tape, const Tensor& s_prev, const Tensor& t,
                                  const Tensor& g) {
  if (!s_prev.same_shape(t) || !s_prev.same_shape(g)) {
    throw DimensionError("gated_update: shape mismatch " + shape_str(s_prev.shape()) + " vs " +
                         shape_str(t.shape()) + " vs " + shape_str(g.shape()));
  }
  Tensor out = Tensor::zeros(s_prev.shape(),
                             s_prev.dtype() == DType::kF32 && t.dtype() == DType::kF32 &&
                                     g.dtype() == DType::kF32
                                 ? DType::kF32
                                 : DType::kF64);
  const int64_t n = out.numel();
  // std::lerp keeps each element inside [min(s_prev,t), max(s_prev,t)]
  for (int64_t i = 0; i < n; ++i) out.at(i) = std::lerp(s_prev.at(i), t.at(i), g.at(i));
  const bool needs = s_prev.requires_grad() || t.requires_grad() || g.requires_grad();
  if (tape != nullptr && needs) {
    out.set_requires_grad(true);
    Tensor sc = s_prev, tc = t, gc = g, oc = out;
    tape->record([sc, tc, gc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      if (sc.requires_grad()) sc.ensure_grad();
      if (tc.requires_grad()) tc.ensure_grad();
      if (gc.requires_grad()) gc.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double go = oc.grad()[i];
        if (sc.requires_grad()) sc.grad()[i] += go * (1.0 - gc.at(i));
        if (tc.requires_grad()) tc.grad()[i] += go * gc.at(i);
        if (gc.requires_grad()) gc.grad()[i] += go * (tc.at(i) - sc.at(i));
      }
    });
  }
  out.apply_precision();
  out.check_finite("gated_update");
  return out;
}

ShadowState UpdateModule::step(Tape* tape, const ShadowState& s_prev, const Tensor& h_out,
                               int64_t layer, Mode mode, const RngFactory& rng,
                               int64_t train_step) const {
  if (layer != s_prev.layer_cursor + 1) {
    throw SequencingError("update step: layer " + std::to_string(layer) +
                          " does not follow cursor " + std::to_string(s_prev.layer_cursor));
  }
  if (!enabled) {
    return ShadowState{s_prev.s, layer};
  }
  check_layer("update step", layer);
  Tensor z = use_layernorm ? normalize_base_output(tape, h_out, layer) : h_out;
  Tensor t = transform(tape, z, layer, mode, rng, train_step);
  Tensor g = gate(tape, z, layer);
  return ShadowState{gated_update(tape, s_prev.s, t, g), layer};
}

int64_t UpdateModule::param_count() const {
  int64_t n = 0;
  for (const auto& p : layers) {
    n += p.t1.numel() + p.t2.numel() + p.g1.numel() + p.g2.numel();
    if (p.ln_gamma.defined()) n += p.ln_gamma.numel() + p.ln_beta.numel();
  }
  return n;
}

void UpdateModule::set_trainable(bool v) {
  for (auto& p : layers) {
    for (Tensor* t : {&p.t1, &p.t2, &p.g1, &p.g2}) t->set_requires_grad(v);
    if (p.ln_gamma.defined()) {
      p.ln_gamma.set_requires_grad(v);
      p.ln_beta.set_requires_grad(v);
    }
  }
}

void UpdateModule::collect_params(std::vector<NamedParam>& out) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string l = std::to_string(i + 1);
    const auto& p = layers[i];
    out.push_back({"update.L" + l + ".t1", p.t1});
    out.push_back({"update.L" + l + ".t2", p.t2});
    out.push_back({"update.L" + l + ".g1", p.g1});
    out.push_back({"update.L" + l + ".g2", p.g2});
    if (p.ln_gamma.defined()) {
      out.push_back({"update.L" + l + ".ln_gamma", p.ln_gamma});
      out.push_back({"update.L" + l + ".ln_beta", p.ln_beta});
    }
  }
}

}  // namespace shadowpeft
