#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "shadowpeft/shadow.hpp"

using namespace shadowpeft;

namespace {

BaseConfig base_config(int64_t layers = 4, int64_t hidden = 16, int64_t heads = 4) {
  BaseConfig cfg;
  cfg.vocab_size = 8;
  cfg.hidden = hidden;
  cfg.layers = layers;
  cfg.heads = heads;
  cfg.mlp_width = 2 * hidden;
  cfg.max_seq = 8;
  return cfg;
}

}  // namespace

TEST_CASE("implicit config derivation") {
  SUBCASE("quarter of eight layers") {
    ShadowConfig cfg = derive_implicit_config(base_config(8), 0.25, 1.0);
    CHECK(cfg.layers == 2);
    CHECK(cfg.hidden == 16);
    CHECK(cfg.heads == 4);
  }
  SUBCASE("full width allocates no projections") {
    ShadowConfig cfg = derive_implicit_config(base_config(), 0.25, 1.0);
    RngFactory rng(1);
    BaseModel base = BaseModel::init(base_config(), rng, DType::kF64);
    ShadowModel shadow = ShadowModel::init(cfg, base, rng, DType::kF64);
    CHECK_FALSE(shadow.w_in.defined());
    CHECK_FALSE(shadow.w_proj.defined());
  }
  SUBCASE("floor clamps to one layer") {
    ShadowConfig cfg = derive_implicit_config(base_config(4), 0.1, 1.0);
    CHECK(cfg.layers == 1);
  }
  SUBCASE("as many layers as the base is rejected") {
    CHECK_THROWS_AS(derive_implicit_config(base_config(4), 1.0, 1.0), ConfigError);
  }
  SUBCASE("hidden is a multiple of the scaled head count") {
    ShadowConfig cfg = derive_implicit_config(base_config(8, 32, 4), 0.25, 0.4);
    CHECK(cfg.hidden % cfg.heads == 0);
    CHECK(cfg.hidden >= cfg.heads);
  }
}

TEST_CASE("zeroed-residual shadow is the identity on the shared embeddings") {
  BaseConfig bc = base_config();
  RngFactory rng(2);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowConfig sc = derive_implicit_config(bc, 0.25, 1.0);
  ShadowModel shadow = ShadowModel::init(sc, base, rng, DType::kF64);
  for (auto& layer : shadow.layers) {
    for (Tensor* t : {&layer.ln1_gamma, &layer.ln1_beta, &layer.wq, &layer.wk, &layer.wv,
                      &layer.wo, &layer.ln2_gamma, &layer.ln2_beta, &layer.w1, &layer.w2}) {
      for (int64_t i = 0; i < t->numel(); ++i) t->at(i) = 0.0;
    }
  }
  auto stream = rng.stream("x");
  Tensor x = randn({2, 4, 16}, stream, 1.0);
  ShadowState state = shadow.init_state(nullptr, x);
  CHECK(state.layer_cursor == 0);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(state.s.at(i) == x.at(i));
}

TEST_CASE("narrow shadow still yields a base-width state") {
  BaseConfig bc = base_config(4, 16, 4);
  RngFactory rng(3);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowConfig sc = derive_implicit_config(bc, 0.5, 0.5);
  CHECK(sc.hidden < bc.hidden);
  ShadowModel shadow = ShadowModel::init(sc, base, rng, DType::kF64);
  CHECK(shadow.w_in.defined());
  CHECK(shadow.w_proj.defined());

  auto stream = rng.stream("x");
  Tensor x = randn({2, 5, 16}, stream, 1.0);
  ForwardTrace trace;
  ShadowState state = shadow.init_state(nullptr, x, &trace);
  CHECK(state.s.shape() == Shape{2, 5, 16});
  CHECK(trace.shadow_layer_calls == sc.layers);
}

TEST_CASE("shadow state gradients vs finite differences") {
  BaseConfig bc = base_config(4, 8, 2);
  RngFactory rng(4);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowConfig sc = derive_implicit_config(bc, 0.25, 0.5);
  ShadowModel shadow = ShadowModel::init(sc, base, rng, DType::kF64);
  shadow.set_trainable(true);

  auto sx = rng.stream("x");
  Tensor x = randn({1, 3, 8}, sx, 0.5);
  auto sw = rng.stream("w");
  Tensor w = randn({24, 1}, sw, 1.0);
  auto f = [&](Tape& tape) {
    ShadowState state = shadow.init_state(&tape, x);
    Tensor flat = ops::reshape(&tape, state.s, {1, state.s.numel()});
    return ops::matmul(&tape, flat, w);
  };
  std::vector<NamedParam> params;
  shadow.collect_params(params);
  std::erase_if(params, [](const NamedParam& p) { return p.name == "shadow.w_head" ||
                                                         p.name == "shadow.w_cls"; });
  auto res = grad_check(f, params);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("shadow heads") {
  BaseConfig bc = base_config();
  RngFactory rng(5);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowModel shadow =
      ShadowModel::init(derive_implicit_config(bc, 0.25, 1.0), base, rng, DType::kF64);

  SUBCASE("zero state gives zero logits") {
    Tensor z = shadow.lm_logits(nullptr, Tensor::zeros({2, 3, 16}));
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0.0);
  }
  SUBCASE("classifier head starts as a bitwise copy of the base head") {
    CHECK(shadow.w_cls_shadow.numel() == base.w_cls.numel());
    for (int64_t i = 0; i < base.w_cls.numel(); ++i) {
      CHECK(shadow.w_cls_shadow.at(i) == base.w_cls.at(i));
    }
    CHECK_FALSE(shadow.w_cls_shadow.same_storage(base.w_cls));
  }
  SUBCASE("lm head matches a naive matmul oracle") {
    auto stream = rng.stream("s");
    Tensor s = randn({2, 3, 16}, stream, 1.0);
    Tensor got = shadow.lm_logits(nullptr, s);
    for (int64_t r = 0; r < 6; ++r) {
      for (int64_t vcol = 0; vcol < 8; ++vcol) {
        double acc = 0.0;
        for (int64_t j = 0; j < 16; ++j) acc += s.at(r * 16 + j) * shadow.w_head.at(j * 8 + vcol);
        CHECK(got.at(r * 8 + vcol) == doctest::Approx(acc).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("shadow owns no embedding table") {
  BaseConfig bc = base_config();
  RngFactory rng(6);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowModel shadow =
      ShadowModel::init(derive_implicit_config(bc, 0.25, 1.0), base, rng, DType::kF64);
  std::vector<NamedParam> params;
  shadow.collect_params(params);
  for (const auto& p : params) {
    CHECK(p.name.find("emb") == std::string::npos);
  }
}

TEST_CASE("explicit mode accepts a hand-specified architecture") {
  BaseConfig bc = base_config(4, 16, 4);
  RngFactory rng(8);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowConfig sc;
  sc.mode = "explicit";
  sc.layers = 2;  // explicit shadows may have any depth
  sc.hidden = 8;
  sc.heads = 2;
  sc.mlp_width = 12;
  ShadowModel shadow = ShadowModel::init(sc, base, rng, DType::kF64);
  auto stream = rng.stream("x");
  Tensor x = randn({2, 4, 16}, stream, 1.0);
  ForwardTrace trace;
  ShadowState state = shadow.init_state(nullptr, x, &trace);
  CHECK(state.s.shape() == Shape{2, 4, 16});
  CHECK(trace.shadow_layer_calls == 2);
}

TEST_CASE("width mismatch without projections is rejected") {
  BaseConfig bc = base_config(4, 16, 4);
  RngFactory rng(7);
  BaseModel base = BaseModel::init(bc, rng, DType::kF64);
  ShadowConfig sc = derive_implicit_config(bc, 0.5, 0.5);
  ShadowModel shadow = ShadowModel::init(sc, base, rng, DType::kF64);
  shadow.w_in = Tensor();  // simulate a missing projection
  auto stream = rng.stream("x");
  Tensor x = randn({1, 2, 16}, stream, 1.0);
  CHECK_THROWS_AS(shadow.init_state(nullptr, x), DimensionError);
}
