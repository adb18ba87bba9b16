#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "model.hpp"

using namespace krls;
namespace ad = krls::ad;
namespace fs = std::filesystem;

namespace {

const SpecialIds kSp;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("krls_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = helpers::tiny_model_config(12, 0);
  CHECK_NOTHROW(cfg.validate());
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = helpers::tiny_model_config(0, 0);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("next_word_dists: shape, normalization, single forward") {
  PolicyModel model(helpers::tiny_model_config(12, 42));
  std::vector<int> ctx = {4, 5, 6};
  std::vector<int> gold = {7, 8, 9, 2};
  model.reset_forward_count();
  ad::Mat dists = next_word_dists(model, ctx, gold, kSp);
  CHECK(model.forward_count() == 1);
  CHECK(dists.rows() == 4);
  CHECK(dists.cols() == 12);
  for (int t = 0; t < 4; ++t) CHECK(std::abs(dists.row(t).sum() - 1.0) < 1e-9);
}

TEST_CASE("next_word_dists: zeroed output projection gives uniform rows") {
  PolicyModel model(helpers::tiny_model_config(12, 1));
  model.mutable_output_projection().value().setZero();
  ad::Mat dists = next_word_dists(model, {4, 5}, {6, 7, 8}, kSp);
  CHECK((dists.array() - 1.0 / 12).abs().maxCoeff() < 1e-15);
}

TEST_CASE("causality: row t matches the truncated input") {
  PolicyModel model(helpers::tiny_model_config(12, 7));
  std::vector<int> ctx = {4, 5, 6};
  std::vector<int> gold = {7, 8, 9, 10, 2};
  ad::Mat full = next_word_dists(model, ctx, gold, kSp);
  for (std::size_t t = 1; t <= gold.size(); ++t) {
    std::vector<int> prefix(gold.begin(), gold.begin() + static_cast<long>(t));
    ad::Mat part = next_word_dists(model, ctx, prefix, kSp);
    // Different input lengths change Eigen's accumulation order, so this
    // oracle is near-exact rather than bitwise.
    for (std::size_t u = 0; u < t; ++u)
      CHECK((full.row(static_cast<Eigen::Index>(u)) - part.row(static_cast<Eigen::Index>(u)))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
  }
}

TEST_CASE("causality: perturbing position t leaves earlier rows untouched") {
  PolicyModel model(helpers::tiny_model_config(12, 9));
  std::vector<int> ctx = {4, 5};
  std::vector<int> gold = {6, 7, 8, 9};
  ad::Mat base = next_word_dists(model, ctx, gold, kSp);
  for (std::size_t t = 1; t < gold.size(); ++t) {
    std::vector<int> mutated = gold;
    mutated[t] = (mutated[t] + 1) % 12;
    ad::Mat alt = next_word_dists(model, ctx, mutated, kSp);
    for (std::size_t u = 0; u < t; ++u)
      CHECK(
          (base.row(static_cast<Eigen::Index>(u)) - alt.row(static_cast<Eigen::Index>(u)))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("forward determinism") {
  PolicyModel model(helpers::tiny_model_config(12, 3));
  ad::Mat a = next_word_dists(model, {4, 5}, {6, 7, 8}, kSp);
  ad::Mat b = next_word_dists(model, {4, 5}, {6, 7, 8}, kSp);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("input validation") {
  PolicyModel model(helpers::tiny_model_config(12, 3));
  ad::Tape t(false);
  std::vector<int> too_long(40, 4);
  CHECK_THROWS_AS(model.forward_logits(t, too_long), DimensionError);
  CHECK_THROWS_AS(model.forward_logits(t, {4, 12}), DimensionError);
  CHECK_THROWS_AS(model.forward_logits(t, {4, -1}), DimensionError);
  CHECK_THROWS_AS(model.forward_logits(t, {}), DimensionError);
}

TEST_CASE("sl_loss: uniform model gives ln V; matches the manual sum") {
  int V = 200;
  ModelConfig cfg = helpers::tiny_model_config(V, 5);
  PolicyModel model(cfg);
  std::vector<int> ctx = {4, 5, 6};
  std::vector<int> gold = {7, 8, 9};

  PolicyModel uniform(cfg);
  uniform.mutable_output_projection().value().setZero();
  ad::Tape t(false);
  CHECK(std::abs(sl_loss(t, uniform, ctx, gold, kSp).item() - std::log(double(V))) < 1e-12);

  ad::Mat dists = next_word_dists(model, ctx, gold, kSp);
  double manual = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    manual += -std::log(dists(static_cast<Eigen::Index>(i), gold[i]));
  manual /= static_cast<double>(gold.size());
  CHECK(std::abs(sl_loss(t, model, ctx, gold, kSp).item() - manual) < 1e-12);
}

TEST_CASE("sl_loss gradcheck through the full model") {
  PolicyModel model(helpers::tiny_model_config(12, 13));
  std::vector<int> ctx = {4, 5};
  std::vector<int> gold = {6, 7, 2};
  auto build = [&](ad::Tape& t) { return sl_loss(t, model, ctx, gold, kSp); };
  CHECK(helpers::gradcheck(model.parameters(), build) < 1e-4);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  TempDir dir;
  Hash256 hash{};
  hash[0] = 0xab;
  PolicyModel model(helpers::tiny_model_config(12, 17));
  std::string path = dir.file("m.krls");
  save_checkpoint(model, path, hash);
  PolicyModel loaded = load_checkpoint(path, hash);

  auto a = model.named_parameters();
  auto b = loaded.named_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.value() == b[i].second.value());
  }
  ad::Mat fa = next_word_dists(model, {4, 5}, {6, 7}, kSp);
  ad::Mat fb = next_word_dists(loaded, {4, 5}, {6, 7}, kSp);
  CHECK((fa - fb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint rejections carry distinct reasons") {
  TempDir dir;
  Hash256 hash{};
  PolicyModel model(helpers::tiny_model_config(12, 19));
  std::string path = dir.file("m.krls");
  save_checkpoint(model, path, hash);

  SUBCASE("corrupted magic") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.write("XXXX", 4);
    f.close();
    try {
      load_checkpoint(path, hash);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.reason == CheckpointError::Reason::not_a_checkpoint);
    }
  }

  SUBCASE("version mismatch") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
    f.close();
    try {
      load_checkpoint(path, hash);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.reason == CheckpointError::Reason::version_mismatch);
    }
  }

  SUBCASE("vocabulary hash mismatch") {
    Hash256 other{};
    other[0] = 0x01;
    try {
      load_checkpoint(path, other);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.reason == CheckpointError::Reason::vocab_hash_mismatch);
    }
  }

  SUBCASE("truncated file") {
    auto size = fs::file_size(path);
    fs::resize_file(path, size / 2);
    try {
      load_checkpoint(path, hash);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(e.reason == CheckpointError::Reason::truncated);
    }
  }
}
