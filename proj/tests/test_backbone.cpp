#include <doctest.h>

#include "duoformer/backbone.hpp"
#include "duoformer/errors.hpp"
#include "duoformer/serialize.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace duo;

namespace {

FeaturePyramid<double> run_backbone(int size, const std::vector<int>& channels, Index batch,
                                    NormMode mode = NormMode::eval) {
  ParameterStore<double> store;
  Rng rng(1);
  init_toy_backbone(store, channels, 3, rng);
  const auto images = oracle::random_tensor<double>(rng, {batch, size, size, 3}, 0.0, 1.0);
  return toy_backbone_forward(store, images, 3, mode);
}

}  // namespace

TEST_CASE("stage extents follow H / (4 * 2^i)") {
  CHECK(stage_extent(224, 0) == 56);
  CHECK(stage_extent(224, 1) == 28);
  CHECK(stage_extent(224, 2) == 14);
  CHECK(stage_extent(224, 3) == 7);
  CHECK(stage_extent(32, 2) == 2);
  CHECK_THROWS_AS(stage_extent(36, 2), ConfigError);
}

TEST_CASE("toy backbone at H=224 yields 56, 28, 14, 7") {
  const auto p = run_backbone(224, {4, 4, 4, 4}, 1);
  REQUIRE(p.stages.size() == 4);
  const int expected[] = {56, 28, 14, 7};
  for (int i = 0; i < 4; ++i) {
    CHECK(p.stages[i].first == i);
    CHECK(p.stages[i].second.dim(1) == expected[i]);
    CHECK(p.stages[i].second.dim(2) == expected[i]);
  }
  CHECK(p.input_size == 224);
}

TEST_CASE("toy backbone at H=64 with channels 8,16,32,64") {
  // Pᵢ = 64 / (4·2ⁱ) = 16, 8, 4, 2 with Cᵢ as configured, channel-last.
  const auto p = run_backbone(64, {8, 16, 32, 64}, 2, NormMode::train);
  CHECK(p.at(0).shape() == Shape{2, 16, 16, 8});
  CHECK(p.at(1).shape() == Shape{2, 8, 8, 16});
  CHECK(p.at(2).shape() == Shape{2, 4, 4, 32});
  CHECK(p.at(3).shape() == Shape{2, 2, 2, 64});
  CHECK(p.batch() == 2);
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("toy backbone output is non-negative and batch independent in eval mode") {
  ParameterStore<double> store;
  Rng rng(2);
  init_toy_backbone(store, {4, 4, 4, 4}, 3, rng);
  const auto images = oracle::random_tensor<double>(rng, {2, 32, 32, 3}, 0.0, 1.0);
  const auto both = toy_backbone_forward(store, images, 3, NormMode::eval);
  const auto first = toy_backbone_forward(store, index_select(images, 0, {0}), 3, NormMode::eval);
  for (int i = 0; i < 4; ++i) {
    CHECK(both.at(i).data().minCoeff() >= 0.0);
    const auto row0 = index_select(both.at(i), 0, {0});
    CHECK(oracle::values(row0) == oracle::values(first.at(i)));
  }
}

TEST_CASE("toy backbone rejects malformed images") {
  ParameterStore<double> store;
  Rng rng(3);
  init_toy_backbone(store, {4, 4, 4, 4}, 3, rng);
  CHECK_THROWS_AS(toy_backbone_forward(store, Tensor<double>({1, 32, 64, 3}, 0.0), 3, NormMode::eval),
                  ConfigError);
  CHECK_THROWS_AS(toy_backbone_forward(store, Tensor<double>({1, 48, 48, 3}, 0.0), 3, NormMode::eval),
                  ConfigError);
  CHECK_THROWS_AS(toy_backbone_forward(store, Tensor<double>({1, 32, 32, 1}, 0.0), 3, NormMode::eval),
                  Error);
}

TEST_CASE("select_stages and select_batch") {
  const auto p = run_backbone(32, {4, 4, 4, 4}, 3);
  const auto s = select_stages(p, {1, 3});
  REQUIRE(s.stages.size() == 2);
  CHECK(s.has(1));
  CHECK_FALSE(s.has(0));
  CHECK_THROWS_AS(s.at(0), ContractError);
  const auto b = select_batch(p, {2, 0});
  CHECK(b.batch() == 2);
  CHECK(oracle::values(index_select(b.at(2), 0, {1})) == oracle::values(index_select(p.at(2), 0, {0})));
}

TEST_CASE("pyramid files") {
  scratch::Dir dir("pyramid");
  Rng rng(4);

  SUBCASE("single stage 3 at 224 is a valid pyramid") {
    io::Container c;
    c.put("stage3", io::to_record(oracle::random_tensor<float>(rng, {1, 7, 7, 64})));
    c.put("input_size", io::from_i64({}, {224}));
    io::save_container(dir / "p.dfc", c);
    const auto p = load_pyramid<float>(dir / "p.dfc");
    CHECK(p.stages.size() == 1);
    CHECK(p.has(3));
    CHECK(p.input_size == 224);
  }
  SUBCASE("27 is not the stage 1 extent at 224") {
    io::Container c;
    c.put("stage1", io::to_record(oracle::random_tensor<float>(rng, {1, 27, 27, 16})));
    c.put("input_size", io::from_i64({}, {224}));
    io::save_container(dir / "p.dfc", c);
    try {
      load_pyramid<float>(dir / "p.dfc");
      FAIL("expected rejection");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("28") != std::string::npos);
    }
  }
  SUBCASE("round trip") {
    const auto p = run_backbone(32, {4, 5, 6, 7}, 2);
    save_pyramid(dir / "p.dfc", p);
    const auto q = load_pyramid<double>(dir / "p.dfc");
    REQUIRE(q.stages.size() == p.stages.size());
    for (std::size_t i = 0; i < p.stages.size(); ++i) {
      CHECK(q.stages[i].first == p.stages[i].first);
      CHECK(q.stages[i].second.shape() == p.stages[i].second.shape());
      CHECK(oracle::values(q.stages[i].second) == oracle::values(p.stages[i].second));
    }
  }
  SUBCASE("unexpected entries and missing input_size") {
    io::Container c;
    c.put("stage3", io::to_record(oracle::random_tensor<float>(rng, {1, 7, 7, 4})));
    io::save_container(dir / "p.dfc", c);
    CHECK_THROWS_AS(load_pyramid<float>(dir / "p.dfc"), FormatError);
    c.put("input_size", io::from_i64({}, {224}));
    c.put("stage9", io::to_record(oracle::random_tensor<float>(rng, {1, 1, 1, 4})));
    io::save_container(dir / "p.dfc", c);
    CHECK_THROWS_AS(load_pyramid<float>(dir / "p.dfc"), FormatError);
  }
  SUBCASE("mismatched batch extents") {
    io::Container c;
    c.put("stage2", io::to_record(oracle::random_tensor<float>(rng, {2, 14, 14, 4})));
    c.put("stage3", io::to_record(oracle::random_tensor<float>(rng, {1, 7, 7, 4})));
    c.put("input_size", io::from_i64({}, {224}));
    io::save_container(dir / "p.dfc", c);
    CHECK_THROWS_AS(load_pyramid<float>(dir / "p.dfc"), FormatError);
  }
}
