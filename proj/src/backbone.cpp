#include "shadowpeft/backbone.hpp"

#include <cmath>

namespace shadowpeft {

DecoderLayerParams DecoderLayerParams::init(int64_t d, int64_t ff, const RngFactory& rng,
                                            const std::string& scope, double stdev, DType dtype) {
  DecoderLayerParams p;
  auto normal = [&](const char* slot, Shape shape) {
    auto stream = rng.stream(scope + "/" + slot);
    return randn(std::move(shape), stream, stdev, dtype);
  };
  p.ln1_gamma = Tensor::full({d}, 1.0, dtype);
  p.ln1_beta = Tensor::zeros({d}, dtype);
  p.wq = normal("wq", {d, d});
  p.wk = normal("wk", {d, d});
  p.wv = normal("wv", {d, d});
  p.wo = normal("wo", {d, d});
  p.ln2_gamma = Tensor::full({d}, 1.0, dtype);
  p.ln2_beta = Tensor::zeros({d}, dtype);
  p.w1 = normal("w1", {d, ff});
  p.w2 = normal("w2", {ff, d});
  return p;
}

void DecoderLayerParams::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".ln1_gamma", ln1_gamma});
  out.push_back({prefix + ".ln1_beta", ln1_beta});
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".wo", wo});
  out.push_back({prefix + ".ln2_gamma", ln2_gamma});
  out.push_back({prefix + ".ln2_beta", ln2_beta});
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".w2", w2});
}

void DecoderLayerParams::set_requires_grad(bool v) {
  for (Tensor* t : {&ln1_gamma, &ln1_beta, &wq, &wk, &wv, &wo, &ln2_gamma, &ln2_beta, &w1, &w2}) {
    t->set_requires_grad(v);
  }
}

int64_t DecoderLayerParams::param_count() const {
  int64_t n = 0;
  for (const Tensor* t :
       {&ln1_gamma, &ln1_beta, &wq, &wk, &wv, &wo, &ln2_gamma, &ln2_beta, &w1, &w2}) {
    n += t->numel();
  }
  return n;
}

Tensor lora_linear(Tape* tape, const Tensor& x, const Tensor& w_frozen, const Tensor& a,
                   const Tensor& b, double scale, double dropout_p, Mode mode,
                   std::mt19937_64& rng) {
  Tensor frozen_out = ops::matmul(tape, x, w_frozen);
  Tensor down = ops::matmul(tape, x, a);
  Tensor dropped = ops::dropout(tape, down, dropout_p, mode, rng);
  Tensor up = ops::matmul(tape, dropped, b);
  return ops::add_scaled(tape, frozen_out, up, scale);
}

Tensor decoder_layer_forward(Tape* tape, const DecoderLayerParams& params, const Tensor& h,
                             int64_t n_heads, double ln_eps, const LoraHook* lora, Mode mode,
                             std::mt19937_64* lora_rng) {
  if (h.rank() != 3) throw DimensionError("decoder_layer_forward: expects [B,T,d]");
  const int64_t batch = h.dim(0), seq = h.dim(1), d = h.dim(2);
  if (d % n_heads != 0) throw DimensionError("decoder_layer_forward: d not divisible by heads");
  const int64_t head_dim = d / n_heads;

  Tensor x1 = ops::layer_norm(tape, h, params.ln1_gamma, params.ln1_beta, ln_eps);
  Tensor q = (lora && lora->a_q.defined())
                 ? lora_linear(tape, x1, params.wq, lora->a_q, lora->b_q, lora->scale,
                               lora->dropout, mode, *lora_rng)
                 : ops::matmul(tape, x1, params.wq);
  Tensor k = ops::matmul(tape, x1, params.wk);
  Tensor v = (lora && lora->a_v.defined())
                 ? lora_linear(tape, x1, params.wv, lora->a_v, lora->b_v, lora->scale,
                               lora->dropout, mode, *lora_rng)
                 : ops::matmul(tape, x1, params.wv);

  auto split_heads = [&](const Tensor& t) {
    return ops::transpose_12(tape, ops::reshape(tape, t, {batch, seq, n_heads, head_dim}));
  };
  Tensor qh = split_heads(q);  // [B,H,T,hd]
  Tensor kh = split_heads(k);
  Tensor vh = split_heads(v);

  Tensor scores = ops::bmm(tape, qh, ops::transpose_last2(tape, kh));
  scores = ops::scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(head_dim)));
  Tensor probs = ops::causal_softmax(tape, scores);
  Tensor ctx = ops::bmm(tape, probs, vh);  // [B,H,T,hd]
  Tensor merged = ops::reshape(tape, ops::transpose_12(tape, ctx), {batch, seq, d});
  Tensor attn_out = ops::matmul(tape, merged, params.wo);
  Tensor h2 = ops::add(tape, h, attn_out);

  Tensor x2 = ops::layer_norm(tape, h2, params.ln2_gamma, params.ln2_beta, ln_eps);
  Tensor mlp = ops::matmul(tape, ops::silu(tape, ops::matmul(tape, x2, params.w1)), params.w2);
  return ops::add(tape, h2, mlp);
}

BaseModel BaseModel::init(const BaseConfig& cfg, const RngFactory& rng, DType dtype) {
  BaseModel m;
  m.cfg = cfg;
  const double stdev = 0.02;
  {
    auto s = rng.stream("init/base.tok_emb");
    m.tok_emb = randn({cfg.vocab_size, cfg.hidden}, s, stdev, dtype);
  }
  {
    auto s = rng.stream("init/base.pos_emb");
    m.pos_emb = randn({cfg.max_seq, cfg.hidden}, s, stdev, dtype);
  }
  for (int64_t l = 0; l < cfg.layers; ++l) {
    m.layers.push_back(DecoderLayerParams::init(cfg.hidden, cfg.mlp_width, rng,
                                                "init/base.L" + std::to_string(l), stdev, dtype));
  }
  m.lnf_gamma = Tensor::full({cfg.hidden}, 1.0, dtype);
  m.lnf_beta = Tensor::zeros({cfg.hidden}, dtype);
  {
    auto s = rng.stream("init/base.w_lm");
    m.w_lm = randn({cfg.hidden, cfg.vocab_size}, s, stdev, dtype);
  }
  {
    auto s = rng.stream("init/base.w_cls");
    m.w_cls = randn({cfg.hidden, cfg.classes}, s, stdev, dtype);
  }
  return m;
}

Tensor BaseModel::embed(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace) const {
  if (tokens.cols > cfg.max_seq) {
    throw DimensionError("embed: sequence length " + std::to_string(tokens.cols) +
                         " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  if (trace) ++trace->embedding_calls;
  Tensor tok = ops::embedding(tape, tok_emb, tokens);
  IntMatrix pos_ids = IntMatrix::filled(tokens.rows, tokens.cols, 0);
  for (int64_t r = 0; r < tokens.rows; ++r) {
    for (int64_t c = 0; c < tokens.cols; ++c) pos_ids.at(r, c) = static_cast<int32_t>(c);
  }
  Tensor pos = ops::embedding(tape, pos_emb, pos_ids);
  return ops::add(tape, tok, pos);
}

Tensor BaseModel::layer_forward(Tape* tape, const Tensor& h, int64_t layer_index,
                                ForwardTrace* trace, const LoraHook* lora, Mode mode,
                                std::mt19937_64* lora_rng) const {
  if (layer_index < 0 || layer_index >= cfg.layers) {
    throw IndexError("layer_forward: layer " + std::to_string(layer_index) + " outside [0," +
                     std::to_string(cfg.layers) + ")");
  }
  if (trace) ++trace->base_layer_calls;
  return decoder_layer_forward(tape, layers[static_cast<size_t>(layer_index)], h, cfg.heads,
                               cfg.ln_eps, lora, mode, lora_rng);
}

Tensor BaseModel::final_norm(Tape* tape, const Tensor& h) const {
  return ops::layer_norm(tape, h, lnf_gamma, lnf_beta, cfg.ln_eps);
}

Tensor BaseModel::lm_logits(Tape* tape, const Tensor& h) const {
  return ops::matmul(tape, h, w_lm);
}

Tensor BaseModel::cls_logits(Tape* tape, const Tensor& pooled) const {
  return ops::matmul(tape, pooled, w_cls);
}

Tensor BaseModel::forward_hidden(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace,
                                 const std::vector<LoraHook>* lora, Mode mode,
                                 std::mt19937_64* lora_rng) const {
  Tensor h = embed(tape, tokens, trace);
  for (int64_t l = 0; l < cfg.layers; ++l) {
    const LoraHook* hook = lora ? &(*lora)[static_cast<size_t>(l)] : nullptr;
    h = layer_forward(tape, h, l, trace, hook, mode, lora_rng);
  }
  return final_norm(tape, h);
}

void BaseModel::set_trainable(bool v) {
  std::vector<NamedParam> all;
  collect_params(all);
  for (auto& p : all) p.tensor.set_requires_grad(v);
}

uint64_t BaseModel::checksum() const {
  std::vector<NamedParam> all;
  collect_params(all);
  uint64_t acc = 0xcbf29ce484222325ull;
  for (const auto& p : all) acc = combine_checksum(acc, tensor_checksum(p.tensor));
  return acc;
}

void BaseModel::collect_params(std::vector<NamedParam>& out) const {
  out.push_back({"base.tok_emb", tok_emb});
  out.push_back({"base.pos_emb", pos_emb});
  for (size_t l = 0; l < layers.size(); ++l) {
    layers[l].collect("base.L" + std::to_string(l), out);
  }
  out.push_back({"base.lnf_gamma", lnf_gamma});
  out.push_back({"base.lnf_beta", lnf_beta});
  out.push_back({"base.w_lm", w_lm});
  out.push_back({"base.w_cls", w_cls});
}

int64_t BaseModel::param_count() const {
  std::vector<NamedParam> all;
  collect_params(all);
  int64_t n = 0;
  for (const auto& p : all) n += p.tensor.numel();
  return n;
}

}  // namespace shadowpeft
