#include "shadowpeft/runner.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace shadowpeft {
namespace {

constexpr double kDivergenceBound = 1e4;

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

SyntheticTask make_task(const RunConfig& cfg) {
  SyntheticTask task = SyntheticTask::make(cfg.task, cfg.base.vocab_size, cfg.task_seq);
  if (task.seq_len > cfg.base.max_seq) {
    throw ConfigError("task.seq_len: " + std::to_string(task.seq_len) + " exceeds base.max_seq " +
                      std::to_string(cfg.base.max_seq));
  }
  if (task.is_classification && task.classes != cfg.base.classes) {
    throw ConfigError("base.classes: task '" + cfg.task + "' needs " +
                      std::to_string(task.classes) + " classes");
  }
  return task;
}

Tensor pool_hidden(Tape* tape, const Tensor& h, const std::vector<uint8_t>& mask,
                   const std::string& mode) {
  if (mode == "mean") return ops::mean_rows_masked(tape, h, mask);
  return ops::select_rows(tape, h, last_token_indices(mask, h.dim(0), h.dim(1)));
}

Tensor flat_ce(Tape* tape, const Tensor& logits3d, const IntMatrix& targets,
               int32_t ignore_index) {
  Tensor flat = ops::reshape(tape, logits3d,
                             {logits3d.dim(0) * logits3d.dim(1), logits3d.dim(2)});
  return ops::cross_entropy(tape, flat, targets.values, ignore_index);
}

struct EvalCounts {
  int64_t correct = 0;
  int64_t total = 0;
};

void accumulate_lm(EvalCounts& counts, const Tensor& logits, const IntMatrix& targets,
                   int32_t ignore_index) {
  const int64_t b = logits.dim(0), t = logits.dim(1), v = logits.dim(2);
  for (int64_t r = 0; r < b; ++r) {
    for (int64_t c = 0; c < t; ++c) {
      const int32_t want = targets.at(r, c);
      if (want == ignore_index) continue;
      const double* row = logits.data() + (r * t + c) * v;
      int64_t best = 0;
      for (int64_t j = 1; j < v; ++j) {
        if (row[j] > row[best]) best = j;
      }
      counts.correct += (best == want) ? 1 : 0;
      ++counts.total;
    }
  }
}

void accumulate_cls(EvalCounts& counts, const Tensor& logits, const std::vector<int32_t>& labels) {
  const int64_t b = logits.dim(0), c = logits.dim(1);
  for (int64_t r = 0; r < b; ++r) {
    const double* row = logits.data() + r * c;
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    counts.correct += (best == labels[static_cast<size_t>(r)]) ? 1 : 0;
    ++counts.total;
  }
}

int64_t eval_batch_count(const RunConfig& cfg) {
  return (cfg.eval_size + cfg.batch_size - 1) / cfg.batch_size;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& row) {
  return "step=" + std::to_string(row.step) + " total=" + fmt_g17(row.total) +
         " base_ce=" + fmt_g17(row.base_ce) + " shadow_ce=" + fmt_g17(row.shadow_ce) +
         " eval_acc=" + fmt_g17(row.eval_acc);
}

void pretrain_and_freeze(BaseModel& base, const SyntheticTask& task, const RunConfig& cfg,
                         const RngFactory& rng) {
  if (cfg.pretrain_steps > 0) {
    base.set_trainable(true);
    std::vector<NamedParam> params;
    base.collect_params(params);
    AdamW opt(params, cfg.pretrain_lr, cfg.beta1, cfg.beta2, 1e-8, 0.0);
    for (int64_t step = 0; step < cfg.pretrain_steps; ++step) {
      Tape tape;
      Batch batch = task.sample(rng, "pretrain", step, cfg.batch_size);
      Tensor hidden = base.forward_hidden(&tape, batch.tokens);
      Tensor loss;
      if (task.is_classification) {
        Tensor pooled = pool_hidden(&tape, hidden, batch.pad_mask, cfg.pooling);
        loss = ops::cross_entropy(&tape, base.cls_logits(&tape, pooled), batch.labels, -1);
      } else {
        loss = flat_ce(&tape, base.lm_logits(&tape, hidden), batch.lm_targets, task.ignore_index);
      }
      if (loss.item() > kDivergenceBound) {
        throw NumericalError("base pretraining diverged at step " + std::to_string(step));
      }
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  base.set_trainable(false);
}

double evaluate_shadow(const Model& model, const SyntheticTask& task, const RunConfig& cfg,
                       const std::string& inference_mode, ForwardTrace* trace) {
  EvalCounts counts;
  const int64_t batches = eval_batch_count(cfg);
  for (int64_t i = 0; i < batches; ++i) {
    Tape tape;
    Batch batch = task.sample(model.rng, "eval", i, cfg.batch_size);
    if (inference_mode == "detached") {
      Tensor state = model.detached_state(&tape, batch.tokens, trace);
      if (task.is_classification) {
        Tensor pooled = pool_hidden(&tape, state, batch.pad_mask, cfg.pooling);
        accumulate_cls(counts, model.shadow.cls_logits(&tape, pooled), batch.labels);
      } else {
        accumulate_lm(counts, model.shadow.lm_logits(&tape, state), batch.lm_targets,
                      task.ignore_index);
      }
    } else {
      AttachedResult res = model.attached_forward(&tape, batch.tokens, Mode::kEval, 0, trace);
      if (task.is_classification) {
        Tensor pooled = pool_hidden(&tape, res.base_hidden, batch.pad_mask, cfg.pooling);
        accumulate_cls(counts, model.base.cls_logits(&tape, pooled), batch.labels);
      } else {
        accumulate_lm(counts, res.base_lm_logits, batch.lm_targets, task.ignore_index);
      }
    }
  }
  return static_cast<double>(counts.correct) / static_cast<double>(counts.total);
}

double evaluate_lora(const LoraModel& model, const SyntheticTask& task, const RunConfig& cfg,
                     ForwardTrace* trace) {
  EvalCounts counts;
  const int64_t batches = eval_batch_count(cfg);
  for (int64_t i = 0; i < batches; ++i) {
    Tape tape;
    Batch batch = task.sample(model.rng, "eval", i, cfg.batch_size);
    Tensor hidden = model.forward_hidden(&tape, batch.tokens, Mode::kEval, 0, trace);
    if (task.is_classification) {
      Tensor pooled = pool_hidden(&tape, hidden, batch.pad_mask, cfg.pooling);
      accumulate_cls(counts, model.cls_logits(&tape, pooled), batch.labels);
    } else {
      accumulate_lm(counts, model.lm_logits(&tape, hidden), batch.lm_targets, task.ignore_index);
    }
  }
  return static_cast<double>(counts.correct) / static_cast<double>(counts.total);
}

TrainOutcome run_training(const RunConfig& cfg, const std::string& out_dir, std::ostream* log) {
  cfg.validate();
  const SyntheticTask task = make_task(cfg);
  TrainOutcome outcome;

  std::ofstream metrics_file;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics_file.open(out_dir + "/metrics.txt", std::ios::trunc);
    if (!metrics_file) throw ConfigError("cannot write metrics under '" + out_dir + "'");
  }
  auto emit = [&](const MetricsRow& row) {
    outcome.history.push_back(row);
    const std::string line = format_metrics_row(row);
    if (metrics_file.is_open()) metrics_file << line << "\n";
    if (log) (*log) << line << "\n";
  };

  auto run_loop = [&](auto&& step_fn, auto&& eval_fn, const std::vector<NamedParam>& trainables) {
    AdamW opt(trainables, cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay);
    MetricsRow row;
    for (int64_t step = 0; step < cfg.steps; ++step) {
      Tape tape;
      Batch batch = task.sample(RngFactory(cfg.seed), "train", step, cfg.batch_size);
      LossReport report = step_fn(tape, batch, step);
      report.step = step;
      report.trainable_param_count = outcome.trainable_count;
      if (!std::isfinite(report.total_value) || report.total_value > kDivergenceBound) {
        throw NumericalError("training diverged at step " + std::to_string(step) + " (loss " +
                             fmt_g17(report.total_value) + ")");
      }
      opt.zero_grad();
      tape.backward(report.total);
      opt.step();
      row = {step + 1, report.total_value, report.base_ce, report.shadow_ce, 0.0};
      if ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps) {
        row.eval_acc = eval_fn();
        emit(row);
      }
    }
    if (cfg.steps == 0) {
      row = {0, 0.0, 0.0, 0.0, eval_fn()};
      emit(row);
    }
    outcome.final_eval_acc = outcome.history.empty() ? 0.0 : outcome.history.back().eval_acc;
  };

  if (cfg.method == "shadow") {
    Model model = Model::init(cfg);
    pretrain_and_freeze(model.base, task, cfg, model.rng);
    outcome.base_checksum_after_pretrain = model.base.checksum();

    const auto trainables = model.trainable_params();
    for (const auto& p : trainables) outcome.trainable_count += p.tensor.numel();

    auto step_fn = [&](Tape& tape, const Batch& batch, int64_t step) {
      AttachedResult res = model.attached_forward(&tape, batch.tokens, Mode::kTrain, step);
      if (task.is_classification) {
        Tensor base_pooled = pool_hidden(&tape, res.base_hidden, batch.pad_mask, cfg.pooling);
        Tensor shadow_pooled = pool_hidden(&tape, res.final_state.s, batch.pad_mask, cfg.pooling);
        return joint_cls_loss(&tape, base_pooled, shadow_pooled, model.base.w_cls,
                              model.shadow.w_cls_shadow, batch.labels, cfg.lambda);
      }
      return joint_lm_loss(&tape, res.base_lm_logits, res.shadow_loss_logits, batch.lm_targets,
                           task.ignore_index, cfg.lambda);
    };
    auto eval_fn = [&]() { return evaluate_shadow(model, task, cfg, "attached"); };
    run_loop(step_fn, eval_fn, trainables);

    outcome.base_checksum_after_training = model.base.checksum();
    if (!out_dir.empty()) save_checkpoint(out_dir + "/model.ckpt", model.named_params());
  } else {
    int64_t rank_override = 0;
    if (cfg.lora_match_budget) {
      Model reference = Model::init(cfg);
      rank_override = match_budget(count_trainable(reference).total, cfg.base).rank;
    }
    LoraModel model = LoraModel::init(cfg, rank_override);
    outcome.lora_rank_used = model.rank;
    pretrain_and_freeze(model.base, task, cfg, model.rng);
    outcome.base_checksum_after_pretrain = model.base.checksum();

    const auto trainables = model.trainable_params();
    for (const auto& p : trainables) outcome.trainable_count += p.tensor.numel();

    auto step_fn = [&](Tape& tape, const Batch& batch, int64_t step) {
      Tensor hidden = model.forward_hidden(&tape, batch.tokens, Mode::kTrain, step);
      LossReport report;
      Tensor ce;
      if (task.is_classification) {
        Tensor pooled = pool_hidden(&tape, hidden, batch.pad_mask, cfg.pooling);
        ce = ops::cross_entropy(&tape, model.cls_logits(&tape, pooled), batch.labels, -1);
      } else {
        ce = flat_ce(&tape, model.lm_logits(&tape, hidden), batch.lm_targets, task.ignore_index);
      }
      report.total = ce;
      report.total_value = ce.item();
      report.base_ce = report.total_value;
      report.shadow_ce = 0.0;
      report.lambda = 0.0;
      return report;
    };
    auto eval_fn = [&]() { return evaluate_lora(model, task, cfg); };
    run_loop(step_fn, eval_fn, trainables);

    outcome.base_checksum_after_training = model.base.checksum();
    if (!out_dir.empty()) save_checkpoint(out_dir + "/model.ckpt", model.named_params());
  }
  return outcome;
}

double run_eval(const RunConfig& cfg, const std::string& checkpoint_path, ForwardTrace* trace) {
  cfg.validate();
  const SyntheticTask task = make_task(cfg);
  if (cfg.method == "lora") {
    if (cfg.inference_mode == "detached") {
      throw ConfigError("run.inference_mode: the LoRA baseline has no detached mode");
    }
    LoraModel model = LoraModel::init(cfg);
    load_checkpoint_into(checkpoint_path, model.named_params());
    return evaluate_lora(model, task, cfg, trace);
  }
  Model model = Model::init(cfg);
  load_checkpoint_into(checkpoint_path, model.named_params());
  return evaluate_shadow(model, task, cfg, cfg.inference_mode, trace);
}

std::vector<int32_t> run_generate(const RunConfig& cfg, const std::string& checkpoint_path,
                                  const std::vector<int32_t>& prompt, int64_t max_new) {
  cfg.validate();
  if (cfg.method == "lora" && cfg.inference_mode == "detached") {
    throw ConfigError("run.inference_mode: the LoRA baseline has no detached mode");
  }
  if (prompt.empty()) throw ConfigError("generate: prompt must not be empty");
  if (static_cast<int64_t>(prompt.size()) + max_new > cfg.base.max_seq) {
    throw ConfigError("generate: prompt plus max_new exceeds base.max_seq " +
                      std::to_string(cfg.base.max_seq));
  }

  std::vector<int32_t> tokens = prompt;
  auto next_token = [&](auto&& logits_fn) {
    IntMatrix ids;
    ids.rows = 1;
    ids.cols = static_cast<int64_t>(tokens.size());
    ids.values = tokens;
    Tape tape;
    Tensor logits = logits_fn(tape, ids);  // [1, T, V]
    const int64_t t = logits.dim(1), v = logits.dim(2);
    const double* row = logits.data() + (t - 1) * v;
    int64_t best = 0;
    for (int64_t j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = j;
    }
    return static_cast<int32_t>(best);
  };

  if (cfg.method == "lora") {
    LoraModel model = LoraModel::init(cfg);
    load_checkpoint_into(checkpoint_path, model.named_params());
    for (int64_t i = 0; i < max_new; ++i) {
      tokens.push_back(next_token([&](Tape& tape, const IntMatrix& ids) {
        return model.lm_logits(&tape, model.forward_hidden(&tape, ids, Mode::kEval));
      }));
    }
    return tokens;
  }

  Model model = Model::init(cfg);
  load_checkpoint_into(checkpoint_path, model.named_params());
  for (int64_t i = 0; i < max_new; ++i) {
    if (cfg.inference_mode == "detached") {
      tokens.push_back(next_token([&](Tape& tape, const IntMatrix& ids) {
        return model.detached_lm_logits(&tape, ids);
      }));
    } else {
      tokens.push_back(next_token([&](Tape& tape, const IntMatrix& ids) {
        return model.attached_forward(&tape, ids, Mode::kEval).base_lm_logits;
      }));
    }
  }
  return tokens;
}

RunConfig gradcheck_default_config() {
  RunConfig cfg;
  cfg.base.vocab_size = 8;
  cfg.base.hidden = 8;
  cfg.base.layers = 2;
  cfg.base.heads = 2;
  cfg.base.mlp_width = 16;
  cfg.base.max_seq = 8;
  cfg.shadow.layer_fraction = 0.5;  // one shadow layer
  cfg.shadow.width_fraction = 1.0;
  cfg.inject_rank = 2;
  cfg.update_gate_hidden = 4;
  cfg.task = "copy_lm";
  cfg.task_seq = 8;
  cfg.batch_size = 2;
  return cfg;
}

GradCheckResult run_gradcheck(RunConfig cfg) {
  cfg.precision = "f64";
  cfg.inject_dropout = 0.0;
  cfg.update_dropout = 0.0;
  cfg.method = "shadow";
  cfg.validate();
  const SyntheticTask task = make_task(cfg);

  Model model = Model::init(cfg);
  const int64_t batch_size = std::min<int64_t>(cfg.batch_size, 2);
  Batch batch = task.sample(model.rng, "gradcheck", 0, batch_size);

  auto loss_fn = [&](Tape& tape) {
    AttachedResult res = model.attached_forward(&tape, batch.tokens, Mode::kTrain, 0);
    if (task.is_classification) {
      Tensor base_pooled = pool_hidden(&tape, res.base_hidden, batch.pad_mask, cfg.pooling);
      Tensor shadow_pooled = pool_hidden(&tape, res.final_state.s, batch.pad_mask, cfg.pooling);
      return joint_cls_loss(&tape, base_pooled, shadow_pooled, model.base.w_cls,
                            model.shadow.w_cls_shadow, batch.labels, cfg.lambda)
          .total;
    }
    return joint_lm_loss(&tape, res.base_lm_logits, res.shadow_loss_logits, batch.lm_targets,
                         task.ignore_index, cfg.lambda)
        .total;
  };
  return grad_check(loss_fn, model.trainable_params());
}

ParamsReport run_params(const RunConfig& cfg) {
  cfg.validate();
  ParamsReport report;
  Model model = Model::init(cfg);
  report.groups = count_trainable(model);
  if (cfg.lora_match_budget) {
    report.lora_match = match_budget(report.groups.total, cfg.base);
  }
  return report;
}

}  // namespace shadowpeft
