#include "shadowpeft/lora.hpp"

namespace shadowpeft {

LoraModel LoraModel::init(const RunConfig& cfg, int64_t rank_override) {
  cfg.validate();
  LoraModel m;
  m.cfg = cfg;
  m.rng = RngFactory(cfg.seed);
  m.rank = rank_override > 0 ? rank_override : cfg.lora_rank;
  const DType dtype = cfg.dtype();
  m.base = BaseModel::init(cfg.base, m.rng, dtype);
  m.base.set_trainable(false);
  const double stdev = 0.02;
  const double scale = cfg.lora_alpha / static_cast<double>(m.rank);
  for (int64_t l = 0; l < cfg.base.layers; ++l) {
    LoraHook hook;
    auto sq = m.rng.stream("init/lora.a_q", static_cast<uint64_t>(l));
    hook.a_q = randn({cfg.base.hidden, m.rank}, sq, stdev, dtype);
    hook.b_q = Tensor::zeros({m.rank, cfg.base.hidden}, dtype);
    auto sv = m.rng.stream("init/lora.a_v", static_cast<uint64_t>(l));
    hook.a_v = randn({cfg.base.hidden, m.rank}, sv, stdev, dtype);
    hook.b_v = Tensor::zeros({m.rank, cfg.base.hidden}, dtype);
    hook.scale = scale;
    hook.dropout = cfg.lora_dropout;
    for (Tensor* t : {&hook.a_q, &hook.b_q, &hook.a_v, &hook.b_v}) t->set_requires_grad(true);
    m.hooks.push_back(std::move(hook));
  }
  return m;
}

Tensor LoraModel::forward_hidden(Tape* tape, const IntMatrix& tokens, Mode mode,
                                 int64_t train_step, ForwardTrace* trace) const {
  auto stream = rng.stream("dropout/lora", static_cast<uint64_t>(train_step));
  return base.forward_hidden(tape, tokens, trace, &hooks, mode, &stream);
}

std::vector<NamedParam> LoraModel::named_params() const {
  std::vector<NamedParam> out;
  base.collect_params(out);
  for (size_t l = 0; l < hooks.size(); ++l) {
    const std::string prefix = "lora.L" + std::to_string(l);
    out.push_back({prefix + ".a_q", hooks[l].a_q});
    out.push_back({prefix + ".b_q", hooks[l].b_q});
    out.push_back({prefix + ".a_v", hooks[l].a_v});
    out.push_back({prefix + ".b_v", hooks[l].b_v});
  }
  return out;
}

std::vector<NamedParam> LoraModel::trainable_params() const {
  std::vector<NamedParam> out;
  for (auto& p : named_params()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

int64_t LoraModel::adapter_param_count() const {
  int64_t n = 0;
  for (const auto& h : hooks) {
    n += h.a_q.numel() + h.b_q.numel() + h.a_v.numel() + h.b_v.numel();
  }
  return n;
}

int64_t lora_count_for_rank(const BaseConfig& base, int64_t rank) {
  return base.layers * 2 * (2 * base.hidden * rank);
}

BudgetMatch match_budget(int64_t shadow_count, const BaseConfig& base) {
  if (shadow_count <= 0) throw ConfigError("match_budget: reference count must be > 0");
  const int64_t per_rank = lora_count_for_rank(base, 1);
  const int64_t rank = shadow_count / per_rank;
  if (rank < 1) {
    throw ConfigError("match_budget: no feasible LoRA rank, minimum count " +
                      std::to_string(per_rank) + " exceeds budget " +
                      std::to_string(shadow_count));
  }
  BudgetMatch match;
  match.rank = rank;
  match.lora_count = lora_count_for_rank(base, rank);
  match.shadow_count = shadow_count;
  match.relative_gap = static_cast<double>(shadow_count - match.lora_count) /
                       static_cast<double>(shadow_count);
  return match;
}

}  // namespace shadowpeft
