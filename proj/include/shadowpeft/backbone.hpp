#pragma once

#include "shadowpeft/config.hpp"
#include "shadowpeft/linalg.hpp"
#include "shadowpeft/ops.hpp"
#include "shadowpeft/rng.hpp"
#include "shadowpeft/trace.hpp"

namespace shadowpeft {

/// Weights of one pre-norm causal decoder block, bias-free linears.
struct DecoderLayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, wk, wv, wo;  // [d, d]
  Tensor ln2_gamma, ln2_beta;
  Tensor w1, w2;  // [d, ff], [ff, d]

  static DecoderLayerParams init(int64_t d, int64_t ff, const RngFactory& rng,
                                 const std::string& scope, double stdev, DType dtype);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
  void set_requires_grad(bool v);
  int64_t param_count() const;
};

/// Optional low-rank adapters hooked onto the q and v projections of a layer.
struct LoraHook {
  Tensor a_q, b_q;  // [d, r], [r, d]
  Tensor a_v, b_v;
  double scale = 0.0;
  double dropout = 0.0;
};

/// y = x W + scale * Dropout(x A) B.
Tensor lora_linear(Tape* tape, const Tensor& x, const Tensor& w_frozen, const Tensor& a,
                   const Tensor& b, double scale, double dropout_p, Mode mode,
                   std::mt19937_64& rng);

/// Pre-norm block: h + Attn(LN(h)), then + MLP(LN(.)). Strictly causal.
Tensor decoder_layer_forward(Tape* tape, const DecoderLayerParams& params, const Tensor& h,
                             int64_t n_heads, double ln_eps, const LoraHook* lora = nullptr,
                             Mode mode = Mode::kEval, std::mt19937_64* lora_rng = nullptr);

/// The base model: token+position embedding, L decoder layers, final norm and
/// the two heads. Frozen (requires_grad = false everywhere) during PEFT runs.
class BaseModel {
 public:
  BaseConfig cfg;
  Tensor tok_emb;  // [V, d]
  Tensor pos_emb;  // [T_max, d]
  std::vector<DecoderLayerParams> layers;
  Tensor lnf_gamma, lnf_beta;
  Tensor w_lm;   // [d, V]
  Tensor w_cls;  // [d, C]

  static BaseModel init(const BaseConfig& cfg, const RngFactory& rng, DType dtype);

  /// Token + position embedding, computed once per forward; shared with the
  /// shadow backbone as its input.
  Tensor embed(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace = nullptr) const;
  Tensor layer_forward(Tape* tape, const Tensor& h, int64_t layer_index,
                       ForwardTrace* trace = nullptr, const LoraHook* lora = nullptr,
                       Mode mode = Mode::kEval, std::mt19937_64* lora_rng = nullptr) const;
  Tensor final_norm(Tape* tape, const Tensor& h) const;
  Tensor lm_logits(Tape* tape, const Tensor& h) const;        // [.., d] -> [.., V]
  Tensor cls_logits(Tape* tape, const Tensor& pooled) const;  // [B, d] -> [B, C]

  /// Adapter-free forward: embed, all layers, final norm.
  Tensor forward_hidden(Tape* tape, const IntMatrix& tokens, ForwardTrace* trace = nullptr,
                        const std::vector<LoraHook>* lora = nullptr, Mode mode = Mode::kEval,
                        std::mt19937_64* lora_rng = nullptr) const;

  void set_trainable(bool v);
  uint64_t checksum() const;
  void collect_params(std::vector<NamedParam>& out) const;  // names under "base."
  int64_t param_count() const;
};

}  // namespace shadowpeft
