#include "shadowpeft/shadow.hpp"

#include <cmath>

namespace shadowpeft {

ShadowConfig derive_implicit_config(const BaseConfig& base, double layer_fraction,
                                    double width_fraction) {
  if (layer_fraction <= 0.0 || layer_fraction > 1.0 || width_fraction <= 0.0 ||
      width_fraction > 1.0) {
    throw ConfigError("derive_implicit_config: fractions must lie in (0,1]");
  }
  ShadowConfig cfg;
  cfg.mode = "implicit";
  cfg.layer_fraction = layer_fraction;
  cfg.width_fraction = width_fraction;
  cfg.layers = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(layer_fraction * static_cast<double>(base.layers))));
  if (cfg.layers >= base.layers) {
    throw ConfigError("derive_implicit_config: implicit shadow needs fewer layers than the base (" +
                      std::to_string(cfg.layers) + " >= " + std::to_string(base.layers) + ")");
  }
  cfg.heads = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(width_fraction * static_cast<double>(base.heads))));
  const int64_t raw_hidden = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(width_fraction * static_cast<double>(base.hidden))));
  cfg.hidden = std::max(cfg.heads, (raw_hidden / cfg.heads) * cfg.heads);
  cfg.mlp_width = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(width_fraction * static_cast<double>(base.mlp_width))));
  return cfg;
}

ShadowModel ShadowModel::init(const ShadowConfig& cfg, const BaseModel& base,
                              const RngFactory& rng, DType dtype) {
  if (cfg.layers < 1 || cfg.hidden < 1 || cfg.heads < 1 || cfg.mlp_width < 1) {
    throw ConfigError("ShadowModel::init: config has unresolved dimensions");
  }
  if (cfg.hidden % cfg.heads != 0) {
    throw ConfigError("ShadowModel::init: shadow hidden not divisible by shadow heads");
  }
  ShadowModel m;
  m.cfg = cfg;
  m.base_hidden = base.cfg.hidden;
  m.ln_eps = base.cfg.ln_eps;
  const double stdev = 0.02;
  for (int64_t l = 0; l < cfg.layers; ++l) {
    m.layers.push_back(DecoderLayerParams::init(
        cfg.hidden, cfg.mlp_width, rng, "init/shadow.L" + std::to_string(l), stdev, dtype));
  }
  if (cfg.hidden != base.cfg.hidden) {
    auto s_in = rng.stream("init/shadow.w_in");
    m.w_in = randn({base.cfg.hidden, cfg.hidden}, s_in, stdev, dtype);
    auto s_proj = rng.stream("init/shadow.w_proj");
    m.w_proj = randn({cfg.hidden, base.cfg.hidden}, s_proj, stdev, dtype);
  }
  auto s_head = rng.stream("init/shadow.w_head");
  m.w_head = randn({base.cfg.hidden, base.cfg.vocab_size}, s_head, stdev, dtype);
  m.owns_head = true;
  m.w_cls_shadow = base.w_cls.clone();  // copy of the base classifier head
  return m;
}

ShadowState ShadowModel::init_state(Tape* tape, const Tensor& x_embeds,
                                    ForwardTrace* trace) const {
  if (x_embeds.rank() != 3 || x_embeds.dim(2) != base_hidden) {
    throw DimensionError("shadow init_state: expected [B,T," + std::to_string(base_hidden) +
                         "], got " + shape_str(x_embeds.shape()));
  }
  Tensor h = x_embeds;
  if (w_in.defined()) {
    h = ops::matmul(tape, h, w_in);
  } else if (cfg.hidden != base_hidden) {
    throw DimensionError("shadow init_state: input projection missing for d_s != d");
  }
  for (const auto& layer : layers) {
    if (trace) ++trace->shadow_layer_calls;
    h = decoder_layer_forward(tape, layer, h, cfg.heads, ln_eps);
  }
  if (w_proj.defined()) {
    h = ops::matmul(tape, h, w_proj);
  } else if (cfg.hidden != base_hidden) {
    throw DimensionError("shadow init_state: output projection missing for d_s != d");
  }
  return ShadowState{h, 0};
}

Tensor ShadowModel::lm_logits(Tape* tape, const Tensor& s) const {
  return ops::matmul(tape, s, w_head);
}

Tensor ShadowModel::cls_logits(Tape* tape, const Tensor& pooled) const {
  return ops::matmul(tape, pooled, w_cls_shadow);
}

void ShadowModel::set_trainable(bool v) {
  std::vector<NamedParam> all;
  collect_params(all);
  for (auto& p : all) p.tensor.set_requires_grad(v);
}

void ShadowModel::collect_params(std::vector<NamedParam>& out) const {
  for (size_t l = 0; l < layers.size(); ++l) {
    layers[l].collect("shadow.L" + std::to_string(l), out);
  }
  if (w_in.defined()) out.push_back({"shadow.w_in", w_in});
  if (w_proj.defined()) out.push_back({"shadow.w_proj", w_proj});
  if (owns_head) out.push_back({"shadow.w_head", w_head});
  out.push_back({"shadow.w_cls", w_cls_shadow});
}

int64_t ShadowModel::backbone_param_count() const {
  int64_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

int64_t ShadowModel::projection_param_count() const {
  int64_t n = 0;
  if (w_in.defined()) n += w_in.numel();
  if (w_proj.defined()) n += w_proj.numel();
  return n;
}

int64_t ShadowModel::head_param_count() const {
  return (owns_head ? w_head.numel() : 0) + w_cls_shadow.numel();
}

}  // namespace shadowpeft
