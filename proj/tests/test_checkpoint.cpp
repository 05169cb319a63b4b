#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ats/checkpoint.hpp"
#include "ats/model.hpp"
#include "ats/model_config.hpp"
#include "ats/rng.hpp"

using namespace ats;

namespace {

std::string tmp_path(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "ats_ckpt_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

template <class T>
ParamSet<T> sample_params(uint64_t seed) {
  ParamSet<T> p;
  CounterRng rng(seed, "ckpt.sample");
  Tensor<T> a({3, 4});
  for (size_t i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(rng.normal());
  Tensor<T> b({5});
  for (size_t i = 0; i < b.numel(); ++i) b[i] = static_cast<T>(rng.normal());
  p.add("layer.weight", std::move(a), true);
  p.add("frozen.stat", std::move(b), false);
  p.add("bias", Tensor<T>::scalar(static_cast<T>(0.25)), true);
  return p;
}

}  // namespace

TEST_CASE("checkpoint roundtrip preserves values, shapes and flags (f64)") {
  const auto path = tmp_path("rt64.ckpt");
  const auto params = sample_params<double>(1);
  CheckpointInfo info{"stage2", 0xdeadbeefcafe1234ULL, ModelConfig::desk().to_text()};
  save_checkpoint(path, params, info);

  CheckpointInfo back_info;
  const auto back = load_checkpoint<double>(path, &back_info);
  CHECK(back_info.stage == "stage2");
  CHECK(back_info.config_hash == info.config_hash);
  CHECK(back_info.model_config_text == info.model_config_text);
  REQUIRE(back.size() == params.size());
  for (const auto& [name, entry] : params) {
    const auto& other = back.at(name);
    CHECK(other.trainable == entry.trainable);
    REQUIRE(other.value.same_shape(entry.value));
    CHECK(std::memcmp(other.value.data(), entry.value.data(),
                      entry.value.numel() * sizeof(double)) == 0);
  }
}

TEST_CASE("checkpoint roundtrip (f32) and dtype mismatch rejection") {
  const auto path = tmp_path("rt32.ckpt");
  const auto params = sample_params<float>(2);
  save_checkpoint(path, params, CheckpointInfo{"stage1", 1, ""});
  const auto back = load_checkpoint<float>(path);
  CHECK(std::memcmp(back.value("layer.weight").data(),
                    params.value("layer.weight").data(), 12 * sizeof(float)) == 0);
  CHECK_THROWS_AS(load_checkpoint<double>(path), CheckpointError);
}

TEST_CASE("checkpoint readers reject unknown versions and bad magic") {
  const auto path = tmp_path("vers.ckpt");
  save_checkpoint(path, sample_params<double>(3), CheckpointInfo{"stage1", 0, ""});

  SUBCASE("future version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    CHECK_THROWS_AS(load_checkpoint<double>(path), CheckpointError);
    CHECK_THROWS_AS(read_checkpoint_info(path), CheckpointError);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOPE", 4);
    f.close();
    CHECK_THROWS_AS(load_checkpoint<double>(path), CheckpointError);
  }
  SUBCASE("truncated payload") {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    REQUIRE_FALSE(ec);
    std::filesystem::resize_file(path, size - 8, ec);
    REQUIRE_FALSE(ec);
    CHECK_THROWS_AS(load_checkpoint<double>(path), CheckpointError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint<double>(tmp_path("absent.ckpt")), CheckpointError);
  }
}

TEST_CASE("checkpoint info probe reads stage and embedded model config") {
  const auto path = tmp_path("probe.ckpt");
  ModelConfig cfg = ModelConfig::desk();
  cfg.llm_dim = 16;
  cfg.llm_heads = 2;
  save_checkpoint(path, sample_params<float>(4),
                  CheckpointInfo{"stage3", 42, cfg.to_text()});
  const auto info = read_checkpoint_info(path);
  CHECK(info.stage == "stage3");
  CHECK(info.config_hash == 42);
  const auto back = ModelConfig::from_text(info.model_config_text);
  CHECK(back.llm_dim == 16);
  CHECK(back.llm_heads == 2);
  CHECK(back.vocab_size == cfg.vocab_size);
}

TEST_CASE("saved checkpoints are byte-stable across identical saves") {
  const auto p1 = tmp_path("stable1.ckpt");
  const auto p2 = tmp_path("stable2.ckpt");
  const auto params = sample_params<double>(5);
  const CheckpointInfo info{"stage2", 7, ModelConfig::desk().to_text()};
  save_checkpoint(p1, params, info);
  save_checkpoint(p2, params, info);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  CHECK(!sa.empty());
}
