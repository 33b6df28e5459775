#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "shadowpeft/checkpoint.hpp"
#include "shadowpeft/pipeline.hpp"
#include "shadowpeft/runner.hpp"

using namespace shadowpeft;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    const auto nonce = std::chrono::steady_clock::now().time_since_epoch().count();
    path = std::filesystem::temp_directory_path() /
           ("shadowpeft_ckpt_" + std::to_string(nonce) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("round trip is bit-exact including flags and dtypes") {
  TempDir dir;
  RngFactory rng(1);
  auto s1 = rng.stream("a");
  auto s2 = rng.stream("b");
  Tensor a = randn({3, 4}, s1, 1.0);
  a.set_requires_grad(true);
  Tensor b = randn({5}, s2, 1.0, DType::kF32);
  Tensor c = Tensor::scalar(-0.0);

  const std::string path = dir.file("t.ckpt");
  save_checkpoint(path, {{"a", a}, {"b", b}, {"scalar", c}});
  auto entries = read_checkpoint(path);
  REQUIRE(entries.size() == 3);

  CHECK(entries[0].name == "a");
  CHECK(entries[0].trainable);
  CHECK(entries[0].dtype == DType::kF64);
  CHECK(entries[0].shape == Shape{3, 4});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(entries[0].data[static_cast<size_t>(i)] == a.at(i));

  CHECK(entries[1].dtype == DType::kF32);
  CHECK_FALSE(entries[1].trainable);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(entries[1].data[static_cast<size_t>(i)] == b.at(i));

  CHECK(entries[2].shape.empty());

  // bytewise determinism of the writer
  const std::string path2 = dir.file("t2.ckpt");
  save_checkpoint(path2, {{"a", a}, {"b", b}, {"scalar", c}});
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string bytes1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string bytes2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
}

TEST_CASE("loading restores values and trainable flags into a model") {
  TempDir dir;
  RunConfig cfg = gradcheck_default_config();
  Model model = Model::init(cfg);
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, model.named_params());

  RunConfig cfg2 = cfg;
  cfg2.seed = 999;  // different init
  Model other = Model::init(cfg2);
  bool differed = false;
  auto before = other.named_params();
  auto want = model.named_params();
  for (size_t i = 0; i < before.size(); ++i) {
    differed |= tensor_checksum(before[i].tensor) != tensor_checksum(want[i].tensor);
  }
  CHECK(differed);

  load_checkpoint_into(path, other.named_params());
  auto after = other.named_params();
  for (size_t i = 0; i < after.size(); ++i) {
    CHECK(tensor_checksum(after[i].tensor) == tensor_checksum(want[i].tensor));
    CHECK(after[i].tensor.requires_grad() == want[i].tensor.requires_grad());
  }
  CHECK(other.base.checksum() == model.base.checksum());
}

TEST_CASE("duplicate names are rejected on save") {
  TempDir dir;
  Tensor a = Tensor::zeros({2});
  CHECK_THROWS_AS(save_checkpoint(dir.file("dup.ckpt"), {{"x", a}, {"x", a}}), CheckpointError);
}

TEST_CASE("loader rejects unknown versions, bad magic and truncation") {
  TempDir dir;
  Tensor a = Tensor::zeros({2});
  const std::string path = dir.file("v.ckpt");
  save_checkpoint(path, {{"x", a}});

  SUBCASE("version bump") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const uint32_t bad_version = 99;
    f.write(reinterpret_cast<const char*>(&bad_version), sizeof(bad_version));
    f.close();
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  }
  SUBCASE("corrupt magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOTMAGIC", 8);
    f.close();
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  }
  SUBCASE("truncated payload") {
    std::error_code ec;
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 6, ec);
    REQUIRE_FALSE(ec);
    CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_checkpoint(dir.file("nope.ckpt")), CheckpointError); }
}

TEST_CASE("strict by-name loading") {
  TempDir dir;
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({3}, {3, 4, 5});
  const std::string path = dir.file("strict.ckpt");
  save_checkpoint(path, {{"a", a}, {"b", b}});

  SUBCASE("missing tensor in file") {
    Tensor c = Tensor::zeros({2});
    CHECK_THROWS_AS(load_checkpoint_into(path, {{"a", c}, {"c", c}}), CheckpointError);
  }
  SUBCASE("unconsumed tensor in file") {
    Tensor c = Tensor::zeros({2});
    CHECK_THROWS_AS(load_checkpoint_into(path, {{"a", c}}), CheckpointError);
  }
  SUBCASE("shape mismatch") {
    Tensor c = Tensor::zeros({4});
    Tensor d = Tensor::zeros({3});
    CHECK_THROWS_AS(load_checkpoint_into(path, {{"a", c}, {"b", d}}), CheckpointError);
  }
}

TEST_CASE("zeroing base decoder weights in a checkpoint leaves detached eval unchanged") {
  TempDir dir;
  RunConfig cfg = gradcheck_default_config();
  cfg.seed = 21;
  cfg.task_seq = 8;
  cfg.eval_size = 64;
  cfg.batch_size = 8;
  cfg.inference_mode = "detached";
  Model model = Model::init(cfg);
  const std::string path = dir.file("model.ckpt");
  save_checkpoint(path, model.named_params());
  const double acc_before = run_eval(cfg, path);

  // tamper: zero every base decoder-layer tensor, keep everything else
  auto entries = read_checkpoint(path);
  std::vector<NamedParam> rewritten;
  std::vector<Tensor> keep_alive;
  for (auto& e : entries) {
    Tensor t = Tensor::from(e.shape, std::move(e.data), e.dtype);
    t.set_requires_grad(e.trainable);
    if (e.name.rfind("base.L", 0) == 0) {
      for (int64_t i = 0; i < t.numel(); ++i) t.at(i) = 0.0;
    }
    keep_alive.push_back(t);
    rewritten.push_back({e.name, keep_alive.back()});
  }
  const std::string tampered = dir.file("tampered.ckpt");
  save_checkpoint(tampered, rewritten);

  const double acc_after = run_eval(cfg, tampered);
  CHECK(acc_after == acc_before);
}

TEST_CASE("f32 checkpoints round trip bit-exactly") {
  TempDir dir;
  RngFactory rng(2);
  auto s = rng.stream("x");
  Tensor x = randn({16}, s, 1.0, DType::kF32);
  x.set_requires_grad(true);
  const std::string path = dir.file("f32.ckpt");
  save_checkpoint(path, {{"x", x}});
  Tensor y = Tensor::zeros({16}, DType::kF32);
  load_checkpoint_into(path, {{"x", y}});
  CHECK(tensor_checksum(x) == tensor_checksum(y));
  CHECK(y.requires_grad());
}
