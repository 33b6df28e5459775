#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shadowpeft/tensor.hpp"

namespace shadowpeft {

struct BaseConfig {
  int64_t vocab_size = 16;
  int64_t hidden = 32;
  int64_t layers = 4;
  int64_t heads = 4;
  int64_t mlp_width = 64;
  int64_t max_seq = 32;
  int64_t classes = 2;
  double ln_eps = 1e-5;
};

struct ShadowConfig {
  std::string mode = "implicit";  // implicit | explicit
  int64_t layers = 0;             // 0 in implicit mode: derived from fractions
  int64_t hidden = 0;
  int64_t heads = 0;
  int64_t mlp_width = 0;
  double layer_fraction = 0.25;
  double width_fraction = 1.0;
};

/// Every knob of every module. Parsed from `key = value` files with dotted
/// section names; unknown keys are hard errors.
struct RunConfig {
  BaseConfig base;
  ShadowConfig shadow;
  std::string shadow_lm_loss_state = "initial";  // initial | final

  int64_t inject_rank = 4;
  double inject_alpha = 1.0;
  double inject_sigma = 0.02;
  double inject_dropout = 0.05;

  bool update_enabled = true;
  bool update_layernorm = true;
  int64_t update_gate_hidden = 16;
  double update_dropout = 0.05;

  std::string pooling = "last";  // last | mean

  double lambda = 0.05;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int64_t steps = 2000;
  int64_t batch_size = 16;
  int64_t eval_interval = 100;
  int64_t eval_size = 256;
  int64_t pretrain_steps = 500;
  double pretrain_lr = 3e-3;

  std::string task = "copy_lm";  // copy_lm | modadd_lm | parity_cls
  int64_t task_seq = 0;          // 0: task default

  uint64_t seed = 1;
  std::string method = "shadow";            // shadow | lora
  std::string inference_mode = "attached";  // attached | detached
  std::string precision = "f64";            // f32 | f64
  std::string out_dir = "runs";

  int64_t lora_rank = 32;
  double lora_alpha = 32.0;
  double lora_dropout = 0.05;
  bool lora_match_budget = false;

  DType dtype() const { return precision == "f32" ? DType::kF32 : DType::kF64; }

  /// Applies `key = value`; throws ConfigError on unknown key or bad value.
  void set(const std::string& key, const std::string& value);
  /// Validates the whole config; throws ConfigError listing every violated
  /// constraint with its field name.
  void validate() const;
  /// All keys with current values, for dumping.
  std::vector<std::pair<std::string, std::string>> items() const;
};

/// Parses a config file of `key = value` lines ('#' comments allowed) into
/// base_config, then applies overrides in order.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);
RunConfig config_from_overrides(const std::vector<std::string>& overrides,
                                RunConfig initial = RunConfig{});

}  // namespace shadowpeft
