#pragma once

#include <iosfwd>
#include <optional>

#include "shadowpeft/checkpoint.hpp"
#include "shadowpeft/crossscale.hpp"
#include "shadowpeft/lora.hpp"
#include "shadowpeft/training.hpp"

namespace shadowpeft {

struct MetricsRow {
  int64_t step = 0;
  double total = 0.0;
  double base_ce = 0.0;
  double shadow_ce = 0.0;
  double eval_acc = 0.0;
};

std::string format_metrics_row(const MetricsRow& row);

struct TrainOutcome {
  std::vector<MetricsRow> history;
  double final_eval_acc = 0.0;
  uint64_t base_checksum_after_pretrain = 0;
  uint64_t base_checksum_after_training = 0;
  int64_t trainable_count = 0;
  int64_t lora_rank_used = 0;  // lora method only
};

/// Full run: optional base pretraining on the task (then frozen), PEFT
/// training per cfg.method, periodic held-out eval. Writes model.ckpt and
/// metrics.txt under out_dir when non-empty; echoes metrics rows to `log`
/// when non-null. Deterministic given (cfg, seed).
TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir,
                          std::ostream* log = nullptr);

/// Accuracy of a saved model on the task's eval stream, in
/// cfg.inference_mode. Detached mode never calls a base decoder layer.
double run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                ForwardTrace* trace = nullptr);

/// Greedy continuation; echoes the prompt when max_new == 0.
std::vector<int32_t> run_generate(const RunConfig& cfg, const std::string& checkpoint_path,
                                  const std::vector<int32_t>& prompt, int64_t max_new);

/// Gradient check of the full joint loss against central finite differences,
/// with 64-bit precision and dropout forced off.
GradCheckResult run_gradcheck(RunConfig cfg);

/// The tiny configuration the gradcheck subcommand defaults to.
RunConfig gradcheck_default_config();

struct ParamsReport {
  ParamGroupReport groups;
  std::optional<BudgetMatch> lora_match;
};

ParamsReport run_params(const RunConfig& cfg);

/// Shared eval helper: accuracy over the task's deterministic eval stream.
double evaluate_shadow(const Model& model, const SyntheticTask& task, const RunConfig& cfg,
                       const std::string& inference_mode, ForwardTrace* trace = nullptr);
double evaluate_lora(const LoraModel& model, const SyntheticTask& task, const RunConfig& cfg,
                     ForwardTrace* trace = nullptr);

/// Base-only training on the task, then freezing. Used for the
/// pretrain-then-freeze phase of every method.
void pretrain_and_freeze(BaseModel& base, const SyntheticTask& task, const RunConfig& cfg,
                         const RngFactory& rng);

}  // namespace shadowpeft
