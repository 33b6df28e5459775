#include "shadowpeft/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

namespace shadowpeft {
namespace {

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
  const int64_t n = parse_int(key, v);
  if (n < 0) throw ConfigError(key + ": expected non-negative integer, got '" + v + "'");
  return static_cast<uint64_t>(n);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

#define INT_FIELD(key, member)                                                       \
  {key, [](RunConfig& c, const std::string& v) { c.member = parse_int(key, v); },    \
   [](const RunConfig& c) { return std::to_string(c.member); }}
#define DBL_FIELD(key, member)                                                       \
  {key, [](RunConfig& c, const std::string& v) { c.member = parse_double(key, v); }, \
   [](const RunConfig& c) { return fmt_double(c.member); }}
#define STR_FIELD(key, member)                                           \
  {key, [](RunConfig& c, const std::string& v) { c.member = v; },        \
   [](const RunConfig& c) { return c.member; }}
#define BOOL_FIELD(key, member)                                                     \
  {key, [](RunConfig& c, const std::string& v) { c.member = parse_bool(key, v); },  \
   [](const RunConfig& c) { return c.member ? std::string("true") : std::string("false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT_FIELD("base.vocab_size", base.vocab_size),
      INT_FIELD("base.hidden", base.hidden),
      INT_FIELD("base.layers", base.layers),
      INT_FIELD("base.heads", base.heads),
      INT_FIELD("base.mlp_width", base.mlp_width),
      INT_FIELD("base.max_seq", base.max_seq),
      INT_FIELD("base.classes", base.classes),
      DBL_FIELD("base.ln_eps", base.ln_eps),
      STR_FIELD("shadow.mode", shadow.mode),
      INT_FIELD("shadow.layers", shadow.layers),
      INT_FIELD("shadow.hidden", shadow.hidden),
      INT_FIELD("shadow.heads", shadow.heads),
      INT_FIELD("shadow.mlp_width", shadow.mlp_width),
      DBL_FIELD("shadow.layer_fraction", shadow.layer_fraction),
      DBL_FIELD("shadow.width_fraction", shadow.width_fraction),
      STR_FIELD("shadow.lm_loss_state", shadow_lm_loss_state),
      INT_FIELD("inject.rank", inject_rank),
      DBL_FIELD("inject.alpha", inject_alpha),
      DBL_FIELD("inject.sigma", inject_sigma),
      DBL_FIELD("inject.dropout", inject_dropout),
      BOOL_FIELD("update.enabled", update_enabled),
      BOOL_FIELD("update.layernorm", update_layernorm),
      INT_FIELD("update.gate_hidden", update_gate_hidden),
      DBL_FIELD("update.dropout", update_dropout),
      STR_FIELD("pool.mode", pooling),
      DBL_FIELD("train.lambda", lambda),
      DBL_FIELD("train.lr", lr),
      DBL_FIELD("train.beta1", beta1),
      DBL_FIELD("train.beta2", beta2),
      DBL_FIELD("train.weight_decay", weight_decay),
      INT_FIELD("train.steps", steps),
      INT_FIELD("train.batch_size", batch_size),
      INT_FIELD("train.eval_interval", eval_interval),
      INT_FIELD("train.eval_size", eval_size),
      INT_FIELD("train.pretrain_steps", pretrain_steps),
      DBL_FIELD("train.pretrain_lr", pretrain_lr),
      STR_FIELD("task.name", task),
      INT_FIELD("task.seq_len", task_seq),
      {"run.seed",
       [](RunConfig& c, const std::string& v) { c.seed = parse_uint("run.seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      STR_FIELD("run.method", method),
      STR_FIELD("run.inference_mode", inference_mode),
      STR_FIELD("run.precision", precision),
      STR_FIELD("run.out_dir", out_dir),
      INT_FIELD("lora.rank", lora_rank),
      DBL_FIELD("lora.alpha", lora_alpha),
      DBL_FIELD("lora.dropout", lora_dropout),
      BOOL_FIELD("lora.match_budget", lora_match_budget),
  };
  return table;
}

#undef INT_FIELD
#undef DBL_FIELD
#undef STR_FIELD
#undef BOOL_FIELD

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

void check_choice(std::vector<std::string>& errors, const std::string& key,
                  const std::string& value, std::initializer_list<const char*> choices) {
  for (const char* c : choices) {
    if (value == c) return;
  }
  std::string msg = key + ": '" + value + "' is not one of {";
  bool first = true;
  for (const char* c : choices) {
    if (!first) msg += ", ";
    msg += c;
    first = false;
  }
  errors.push_back(msg + "}");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("unrecognized config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };

  require(base.vocab_size >= 2, "base.vocab_size: must be >= 2");
  require(base.layers >= 2, "base.layers: must be >= 2 (layer 0 stays adapter-free)");
  require(base.heads >= 1, "base.heads: must be >= 1");
  require(base.hidden >= 1, "base.hidden: must be >= 1");
  require(base.heads >= 1 && base.hidden % std::max<int64_t>(base.heads, 1) == 0,
          "base.hidden: must be divisible by base.heads");
  require(base.mlp_width >= 1, "base.mlp_width: must be >= 1");
  require(base.max_seq >= 2, "base.max_seq: must be >= 2");
  require(base.classes >= 2, "base.classes: must be >= 2");
  require(base.ln_eps > 0.0, "base.ln_eps: must be > 0");

  check_choice(errors, "shadow.mode", shadow.mode, {"implicit", "explicit"});
  if (shadow.mode == "implicit") {
    require(shadow.layer_fraction > 0.0 && shadow.layer_fraction <= 1.0,
            "shadow.layer_fraction: must lie in (0,1]");
    require(shadow.width_fraction > 0.0 && shadow.width_fraction <= 1.0,
            "shadow.width_fraction: must lie in (0,1]");
  } else {
    require(shadow.layers >= 1, "shadow.layers: must be >= 1 in explicit mode");
    require(shadow.hidden >= 1, "shadow.hidden: must be >= 1 in explicit mode");
    require(shadow.heads >= 1, "shadow.heads: must be >= 1 in explicit mode");
    require(shadow.heads >= 1 && shadow.hidden % std::max<int64_t>(shadow.heads, 1) == 0,
            "shadow.hidden: must be divisible by shadow.heads");
    require(shadow.mlp_width >= 1, "shadow.mlp_width: must be >= 1 in explicit mode");
  }
  check_choice(errors, "shadow.lm_loss_state", shadow_lm_loss_state, {"initial", "final"});

  require(inject_rank >= 1, "inject.rank: must be >= 1");
  require(inject_rank < base.hidden, "inject.rank: must be < base.hidden (low-rank bottleneck)");
  require(inject_alpha > 0.0, "inject.alpha: injection strength must be > 0");
  require(inject_sigma > 0.0, "inject.sigma: must be > 0");
  require(inject_dropout >= 0.0 && inject_dropout < 1.0, "inject.dropout: must lie in [0,1)");

  require(update_gate_hidden >= 1, "update.gate_hidden: must be >= 1");
  require(update_dropout >= 0.0 && update_dropout < 1.0, "update.dropout: must lie in [0,1)");

  check_choice(errors, "pool.mode", pooling, {"last", "mean"});

  require(lambda >= 0.0, "train.lambda: must be >= 0");
  require(lr > 0.0, "train.lr: must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1: must lie in [0,1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2: must lie in [0,1)");
  require(weight_decay >= 0.0, "train.weight_decay: must be >= 0");
  require(steps >= 0, "train.steps: must be >= 0");
  require(batch_size >= 1, "train.batch_size: must be >= 1");
  require(eval_interval >= 1, "train.eval_interval: must be >= 1");
  require(eval_size >= 1, "train.eval_size: must be >= 1");
  require(pretrain_steps >= 0, "train.pretrain_steps: must be >= 0");
  require(pretrain_lr > 0.0, "train.pretrain_lr: must be > 0");

  check_choice(errors, "task.name", task, {"copy_lm", "modadd_lm", "parity_cls"});
  require(task_seq >= 0, "task.seq_len: must be >= 0 (0 = task default)");

  check_choice(errors, "run.method", method, {"shadow", "lora"});
  check_choice(errors, "run.inference_mode", inference_mode, {"attached", "detached"});
  check_choice(errors, "run.precision", precision, {"f32", "f64"});

  require(lora_rank >= 1, "lora.rank: must be >= 1");
  require(lora_dropout >= 0.0 && lora_dropout < 1.0, "lora.dropout: must lie in [0,1)");

  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

RunConfig config_from_overrides(const std::vector<std::string>& overrides, RunConfig initial) {
  RunConfig cfg = initial;
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    }
    cfg.set(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("override '" + ov + "' is not of the form key=value");
    }
    cfg.set(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  return cfg;
}

}  // namespace shadowpeft
