#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "shadowpeft/runner.hpp"

using namespace shadowpeft;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
  bool seed_given = false;
  bool f32 = false;
  std::string method;
  std::string inference_mode;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file of `key = value` lines");
  cmd->add_option("--set", args.overrides, "override, key=value (repeatable)")
      ->take_all();
  cmd->add_option("--seed", args.seed, "RNG seed (wins over SHADOWPEFT_SEED)")
      ->each([&args](const std::string&) { args.seed_given = true; });
  cmd->add_flag("--f32", args.f32, "use 32-bit precision");
  cmd->add_option("--method", args.method, "shadow|lora");
  cmd->add_option("--inference-mode", args.inference_mode, "attached|detached");
  cmd->add_option("--out", args.out_dir, "output directory");
}

RunConfig build_config(const CommonArgs& args, const RunConfig& initial = RunConfig{}) {
  RunConfig cfg = args.config_path.empty()
                      ? config_from_overrides(args.overrides, initial)
                      : load_config(args.config_path, args.overrides);
  if (const char* env = std::getenv("SHADOWPEFT_SEED"); env && !args.seed_given) {
    cfg.set("run.seed", env);
  }
  if (args.seed_given) {
    if (args.seed < 0) throw ConfigError("--seed: must be >= 0");
    cfg.seed = static_cast<uint64_t>(args.seed);
  }
  if (args.f32) cfg.precision = "f32";
  if (!args.method.empty()) cfg.method = args.method;
  if (!args.inference_mode.empty()) cfg.inference_mode = args.inference_mode;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  cfg.validate();
  return cfg;
}

std::vector<int32_t> parse_prompt(const std::string& csv) {
  std::vector<int32_t> tokens;
  std::string current;
  for (char c : csv) {
    if (c == ',') {
      if (!current.empty()) tokens.push_back(std::stoi(current));
      current.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      current.push_back(c);
    }
  }
  if (!current.empty()) tokens.push_back(std::stoi(current));
  return tokens;
}

void print_params_report(const RunConfig& cfg, const ParamsReport& report) {
  const auto& g = report.groups;
  std::cout << "trainable parameters (enumerated | closed-form)\n";
  std::cout << "  injection        " << g.injection << " | " << g.injection_formula << "\n";
  std::cout << "  update           " << g.update << " | " << g.update_formula << "\n";
  std::cout << "  shadow backbone  " << g.shadow_backbone << "\n";
  std::cout << "  shadow heads     " << g.shadow_heads << "\n";
  std::cout << "  projections      " << g.projections << "\n";
  std::cout << "  total            " << g.total << " | enumerated " << g.enumerated << "\n";
  if (g.injection != g.injection_formula || g.update != g.update_formula ||
      g.total != g.enumerated) {
    throw NumericalError("parameter accounting mismatch between enumeration and formulas");
  }
  if (report.lora_match) {
    const auto& m = *report.lora_match;
    std::cout << "lora budget match: rank " << m.rank << ", count " << m.lora_count << " vs "
              << m.shadow_count << " (gap " << m.relative_gap * 100.0 << "%)\n";
  } else if (cfg.method == "lora") {
    std::cout << "lora adapters at rank " << cfg.lora_rank << ": "
              << lora_count_for_rank(cfg.base, cfg.lora_rank) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shadowpeft: frozen-backbone adaptation via a depth-shared shadow network"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, gen_args, grad_args, params_args;
  std::string ckpt_path, prompt_csv;
  int64_t max_new = 16;
  std::string pinv_base, pinv_shadow, pinv_out;

  CLI::App* cmd_train = app.add_subcommand("train", "pretrain base, freeze, run PEFT training");
  add_common(cmd_train, train_args);

  CLI::App* cmd_eval = app.add_subcommand("eval", "accuracy of a saved model on the task");
  add_common(cmd_eval, eval_args);
  cmd_eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();

  CLI::App* cmd_gen = app.add_subcommand("generate", "greedy continuation of a token prompt");
  add_common(cmd_gen, gen_args);
  cmd_gen->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  cmd_gen->add_option("--prompt", prompt_csv, "comma-separated token ids")->required();
  cmd_gen->add_option("--max-new", max_new, "number of tokens to generate");

  CLI::App* cmd_grad = app.add_subcommand("gradcheck",
                                          "joint-loss gradients vs central finite differences");
  add_common(cmd_grad, grad_args);

  CLI::App* cmd_params = app.add_subcommand("params", "trainable parameter accounting");
  add_common(cmd_params, params_args);

  CLI::App* cmd_pinv = app.add_subcommand("pinv-init",
                                          "pseudo-inverse projection between two LM heads");
  cmd_pinv->add_option("--base", pinv_base, "checkpoint holding the base head")->required();
  cmd_pinv->add_option("--shadow", pinv_shadow, "checkpoint holding the reference head")
      ->required();
  cmd_pinv->add_option("--out", pinv_out, "output checkpoint for the projection")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      RunConfig cfg = build_config(train_args);
      TrainOutcome outcome = run_training(cfg, cfg.out_dir, &std::cout);
      std::cout << "final_eval_acc=" << outcome.final_eval_acc << "\n";
      std::cout << "checkpoint=" << cfg.out_dir << "/model.ckpt\n";
      if (outcome.lora_rank_used > 0) std::cout << "lora_rank=" << outcome.lora_rank_used << "\n";
    } else if (cmd_eval->parsed()) {
      RunConfig cfg = build_config(eval_args);
      ForwardTrace trace;
      const double acc = run_eval(cfg, ckpt_path, &trace);
      std::cout << "mode=" << cfg.inference_mode << " task=" << cfg.task << " accuracy=" << acc
                << "\n";
      if (cfg.inference_mode == "detached" && trace.base_layer_calls != 0) {
        throw NumericalError("detached eval touched a base decoder layer");
      }
    } else if (cmd_gen->parsed()) {
      RunConfig cfg = build_config(gen_args);
      const auto tokens = run_generate(cfg, ckpt_path, parse_prompt(prompt_csv), max_new);
      for (size_t i = 0; i < tokens.size(); ++i) {
        std::cout << (i ? "," : "") << tokens[i];
      }
      std::cout << "\n";
    } else if (cmd_grad->parsed()) {
      // without a config file, overrides apply on top of the tiny default
      RunConfig cfg = build_config(grad_args, gradcheck_default_config());
      GradCheckResult result = run_gradcheck(cfg);
      std::cout << "max_rel_err=" << result.max_rel_err << " worst=" << result.worst_param
                << "[" << result.worst_index << "]\n";
      if (result.max_rel_err > 1e-4) {
        std::cerr << "gradcheck FAILED: tensor '" << result.worst_param
                  << "' exceeds tolerance 1e-4\n";
        return 1;
      }
    } else if (cmd_params->parsed()) {
      RunConfig cfg = build_config(params_args);
      print_params_report(cfg, run_params(cfg));
    } else if (cmd_pinv->parsed()) {
      auto find_head = [](const std::string& path) {
        for (auto& e : read_checkpoint(path)) {
          if (e.name == "base.w_lm") {
            Tensor head = Tensor::from(e.shape, std::move(e.data), e.dtype);  // [d, V]
            return ops::transpose_last2(nullptr, head);                      // [V, d]
          }
        }
        throw CheckpointError("no 'base.w_lm' tensor in '" + path + "'");
      };
      Tensor w_lm = find_head(pinv_base);
      Tensor w_ref = find_head(pinv_shadow);
      ProjectionInit init = pinv_init_projection(w_lm, w_ref);
      save_checkpoint(pinv_out, {{"proj.p", init.p}});
      std::cout << "p_shape=" << shape_str(init.p.shape()) << " residual=" << init.residual
                << " w_lm_norm=" << init.w_lm_norm << " w_ref_norm=" << init.w_ref_norm << "\n";
      std::cout << "projection=" << pinv_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
