#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shadowpeft/pipeline.hpp"
#include "shadowpeft/runner.hpp"

using namespace shadowpeft;

namespace {

RunConfig toy_config(uint64_t seed = 1) {
  RunConfig cfg = gradcheck_default_config();
  cfg.seed = seed;
  return cfg;
}

IntMatrix random_tokens(const RunConfig& cfg, uint64_t seed, int64_t batch = 2, int64_t seq = 6) {
  RngFactory rng(seed);
  auto stream = rng.stream("tokens");
  std::uniform_int_distribution<int32_t> tok(0, static_cast<int32_t>(cfg.base.vocab_size - 1));
  IntMatrix m = IntMatrix::filled(batch, seq, 0);
  for (auto& v : m.values) v = tok(stream);
  return m;
}

}  // namespace

TEST_CASE("freshly initialized attached forward equals the frozen base bitwise") {
  RunConfig cfg = toy_config(3);
  Model model = Model::init(cfg);
  for (uint64_t trial = 0; trial < 20; ++trial) {
    IntMatrix tokens = random_tokens(cfg, 100 + trial);
    Tape tape;
    AttachedResult res = model.attached_forward(&tape, tokens, Mode::kEval);
    Tape tape2;
    Tensor standalone = model.base.lm_logits(&tape2,
                                             model.base.forward_hidden(&tape2, tokens));
    REQUIRE(res.base_lm_logits.numel() == standalone.numel());
    for (int64_t i = 0; i < standalone.numel(); ++i) {
      CHECK(res.base_lm_logits.at(i) == standalone.at(i));
    }
  }
}

TEST_CASE("forward trace counters match the loop structure") {
  RunConfig cfg = toy_config(4);
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 5);

  ForwardTrace trace;
  Tape tape;
  model.attached_forward(&tape, tokens, Mode::kEval, 0, &trace);
  CHECK(trace.embedding_calls == 1);
  CHECK(trace.base_layer_calls == cfg.base.layers);
  CHECK(trace.shadow_layer_calls == 1);  // L_s = 1 on the toy config
  CHECK(trace.injection_calls == cfg.base.layers - 1);
  CHECK(trace.update_calls == cfg.base.layers - 1);

  ForwardTrace detached;
  Tape tape2;
  model.detached_lm_logits(&tape2, tokens, &detached);
  CHECK(detached.base_layer_calls == 0);
  CHECK(detached.embedding_calls == 1);
  CHECK(detached.shadow_layer_calls == 1);
}

TEST_CASE("full joint-loss gradient check on the two-layer toy config") {
  RunConfig cfg = toy_config(6);
  auto res = run_gradcheck(cfg);
  CAPTURE(res.worst_param);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("joint-loss gradient check with the update module disabled") {
  RunConfig cfg = toy_config(7);
  cfg.update_enabled = false;
  auto res = run_gradcheck(cfg);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("detached logits are isolated from the base decoder stack") {
  RunConfig cfg = toy_config(8);
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 9);
  Tape tape;
  Tensor before = model.detached_lm_logits(&tape, tokens);

  // tamper with every base decoder-layer weight
  for (auto& layer : model.base.layers) {
    for (Tensor* t : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1, &layer.w2,
                      &layer.ln1_gamma, &layer.ln1_beta, &layer.ln2_gamma, &layer.ln2_beta}) {
      for (int64_t i = 0; i < t->numel(); ++i) t->at(i) += 3.7;
    }
  }
  Tape tape2;
  Tensor after = model.detached_lm_logits(&tape2, tokens);
  for (int64_t i = 0; i < before.numel(); ++i) CHECK(after.at(i) == before.at(i));

  // ... and the attached output does change
  Tape tape3;
  AttachedResult res = model.attached_forward(&tape3, tokens, Mode::kEval);
  bool attached_changed = false;
  Tape tape4;
  (void)tape4;
  Model fresh = Model::init(cfg);
  Tape tape5;
  AttachedResult res_fresh = fresh.attached_forward(&tape5, tokens, Mode::kEval);
  for (int64_t i = 0; i < res.base_lm_logits.numel(); ++i) {
    attached_changed |= res.base_lm_logits.at(i) != res_fresh.base_lm_logits.at(i);
  }
  CHECK(attached_changed);
}

TEST_CASE("detached path equals the manual composition") {
  RunConfig cfg = toy_config(10);
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 11);
  Tape tape;
  Tensor got = model.detached_lm_logits(&tape, tokens);
  Tape tape2;
  Tensor embeds = model.base.embed(&tape2, tokens);
  ShadowState s0 = model.shadow.init_state(&tape2, embeds);
  Tensor want = model.shadow.lm_logits(&tape2, s0.s);
  for (int64_t i = 0; i < want.numel(); ++i) CHECK(got.at(i) == want.at(i));
}

TEST_CASE("shadow perturbations move both modes, adapter ones only the attached") {
  RunConfig cfg = toy_config(12);
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 13);

  auto snapshot = [&]() {
    Tape tape;
    AttachedResult res = model.attached_forward(&tape, tokens, Mode::kEval);
    Tape tape2;
    Tensor detached = model.detached_lm_logits(&tape2, tokens);
    return std::pair<uint64_t, uint64_t>{tensor_checksum(res.base_lm_logits),
                                         tensor_checksum(detached)};
  };
  auto [attached0, detached0] = snapshot();

  model.injection.up[0].at(0) = 0.5;  // adapter-only perturbation
  auto [attached1, detached1] = snapshot();
  CHECK(attached1 != attached0);
  CHECK(detached1 == detached0);

  model.shadow.layers[0].wq.at(0) += 1.0;  // shadow perturbation
  auto [attached2, detached2] = snapshot();
  CHECK(attached2 != attached1);
  CHECK(detached2 != detached1);
}

TEST_CASE("attached forwards are deterministic, also under dropout") {
  RunConfig cfg = toy_config(14);
  cfg.inject_dropout = 0.3;
  cfg.update_dropout = 0.3;
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 15);

  Tape t1, t2;
  AttachedResult a = model.attached_forward(&t1, tokens, Mode::kTrain, 7);
  AttachedResult b = model.attached_forward(&t2, tokens, Mode::kTrain, 7);
  CHECK(tensor_checksum(a.base_lm_logits) == tensor_checksum(b.base_lm_logits));
  CHECK(tensor_checksum(a.final_state.s) == tensor_checksum(b.final_state.s));

  Tape t3;
  AttachedResult c = model.attached_forward(&t3, tokens, Mode::kTrain, 8);
  // the update-path dropout is keyed by (seed, layer, step), so a different
  // step must change the final shadow state
  CHECK(tensor_checksum(a.final_state.s) != tensor_checksum(c.final_state.s));
}

TEST_CASE("loss-state switch selects the supervised shadow state") {
  RunConfig cfg = toy_config(16);
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 17);

  Tape tape;
  AttachedResult res = model.attached_forward(&tape, tokens, Mode::kEval);
  Tensor initial_logits = model.shadow.lm_logits(&tape, res.s0);
  for (int64_t i = 0; i < initial_logits.numel(); ++i) {
    CHECK(res.shadow_loss_logits.at(i) == initial_logits.at(i));
  }

  RunConfig cfg_final = cfg;
  cfg_final.shadow_lm_loss_state = "final";
  Model model_final = Model::init(cfg_final);
  Tape tape2;
  AttachedResult res_final = model_final.attached_forward(&tape2, tokens, Mode::kEval);
  Tensor final_logits = model_final.shadow.lm_logits(&tape2, res_final.final_state.s);
  for (int64_t i = 0; i < final_logits.numel(); ++i) {
    CHECK(res_final.shadow_loss_logits.at(i) == final_logits.at(i));
  }
}

TEST_CASE("pooling selects the last unpadded position") {
  RunConfig cfg = toy_config(18);
  Model model = Model::init(cfg);
  RngFactory rng(19);
  auto stream = rng.stream("h");
  Tensor h = randn({3, 4, 8}, stream, 1.0);

  SUBCASE("single-position sequences pool to themselves") {
    auto s2 = rng.stream("h1");
    Tensor h1 = randn({2, 1, 8}, s2, 1.0);
    Tensor pooled = model.pool(nullptr, h1, {1, 1});
    for (int64_t r = 0; r < 2; ++r) {
      for (int64_t j = 0; j < 8; ++j) CHECK(pooled.at(r * 8 + j) == h1.at(r * 8 + j));
    }
  }
  SUBCASE("padding after position k pools h[:,k,:]") {
    std::vector<uint8_t> mask = {1, 1, 1, 0,   // row 0: last real position 2
                                 1, 0, 0, 0,   // row 1: position 0
                                 1, 1, 1, 1};  // row 2: position 3
    Tensor pooled = model.pool(nullptr, h, mask);
    const int64_t want_pos[3] = {2, 0, 3};
    for (int64_t r = 0; r < 3; ++r) {
      for (int64_t j = 0; j < 8; ++j) {
        CHECK(pooled.at(r * 8 + j) == h.at((r * 4 + want_pos[r]) * 8 + j));
      }
    }
  }
  SUBCASE("a fully padded row is an error") {
    std::vector<uint8_t> mask(12, 1);
    mask[4] = mask[5] = mask[6] = mask[7] = 0;
    CHECK_THROWS_AS(model.pool(nullptr, h, mask), NumericalError);
  }
  SUBCASE("mean pooling averages the unpadded positions") {
    RunConfig cfg_mean = cfg;
    cfg_mean.pooling = "mean";
    Model mean_model = Model::init(cfg_mean);
    std::vector<uint8_t> mask = {1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 0};
    Tensor pooled = mean_model.pool(nullptr, h, mask);
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(pooled.at(j) == doctest::Approx((h.at(j) + h.at(8 + j)) / 2.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("zero-init identity holds in 32-bit mode too") {
  RunConfig cfg = toy_config(20);
  cfg.precision = "f32";
  Model model = Model::init(cfg);
  IntMatrix tokens = random_tokens(cfg, 21);
  Tape tape;
  AttachedResult res = model.attached_forward(&tape, tokens, Mode::kEval);
  Tape tape2;
  Tensor standalone = model.base.lm_logits(&tape2, model.base.forward_hidden(&tape2, tokens));
  for (int64_t i = 0; i < standalone.numel(); ++i) {
    CHECK(res.base_lm_logits.at(i) == standalone.at(i));
  }
}
