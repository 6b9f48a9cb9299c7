#include <doctest.h>

#include "attention_fixtures.hpp"
#include "duoformer/errors.hpp"
#include "oracles.hpp"

using namespace duo;
using T = Tensor<double>;

namespace {

// Encoder store over random weights for a toy-sized duo configuration.
struct EncoderFixture {
  DuoFormerConfig config;
  ParameterStore<double> store;

  EncoderFixture(int layers, bool positions, int scale_extent, std::uint64_t seed = 1) {
    config = DuoFormerConfig::toy();
    config.layers = layers;
    config.scale_pos = positions;
    config.patch_pos = positions;
    Rng rng(seed);
    init_encoder(store, config, scale_extent, rng);
    fixture::randomize(store, rng, 0.3);
  }
};

T permuted(const T& x, int axis, const std::vector<Index>& order) { return index_select(x, axis, order); }

}  // namespace

TEST_CASE("msa with a single token is the output projection of V") {
  ParameterStore<double> store;
  Rng rng(1);
  const auto p = fixture::random_attention(store, rng, 8);
  const auto x = oracle::random_tensor<double>(rng, {3, 1, 8});
  T w;
  const auto y = msa(x, p, 2, &w);
  CHECK(w.shape() == Shape{3, 2, 1, 1});
  for (Index i = 0; i < w.numel(); ++i) CHECK(w.data()[i] == 1.0);
  const auto expect = linear(linear(x, p.wv, p.bv), p.wo, p.bo);
  CHECK(oracle::max_abs_diff(oracle::values(y), oracle::values(expect)) <= 1e-14);
}

TEST_CASE("msa of identical tokens is identical at every position") {
  ParameterStore<double> store;
  Rng rng(2);
  const auto p = fixture::random_attention(store, rng, 8);
  const auto row = oracle::random_tensor<double>(rng, {1, 1, 8});
  const auto x = add(T({1, 5, 8}, 0.0), row);
  const auto y = msa(x, p, 4);
  for (Index t = 1; t < 5; ++t) {
    CHECK(oracle::max_abs_diff(oracle::values(slice(y, 1, t, 1)), oracle::values(slice(y, 1, 0, 1))) <= 1e-15);
  }
}

TEST_CASE("msa matches the per-pair oracle") {
  Rng rng(3);
  const std::vector<std::tuple<Shape, int>> cases = {
      {{2, 5, 16}, 4}, {{1, 1, 4}, 1}, {{3, 7, 12}, 3}, {{2, 3, 4, 8}, 2}, {{4, 2, 6}, 6}};
  for (const auto& [shape, heads] : cases) {
    ParameterStore<double> store;
    const int d = static_cast<int>(shape.back());
    const int t = static_cast<int>(shape[shape.size() - 2]);
    const auto p = fixture::random_attention(store, rng, d);
    const auto x = oracle::random_tensor<double>(rng, shape);
    T w;
    const auto y = msa(x, p, heads, &w);
    const auto xv = oracle::values(x), yv = oracle::values(y);
    const Index seqs = x.numel() / (t * d);
    double worst = 0.0;
    for (Index s = 0; s < seqs; ++s) {
      const oracle::Vec xs(xv.begin() + s * t * d, xv.begin() + (s + 1) * t * d);
      const auto ref = oracle::attention(xs, t, d, heads, fixture::weights_of(p));
      const oracle::Vec got(yv.begin() + s * t * d, yv.begin() + (s + 1) * t * d);
      worst = std::max(worst, oracle::max_abs_diff(got, ref));
    }
    CHECK(worst <= 1e-10);
    const auto row_sums = sum(w, -1);
    for (Index i = 0; i < row_sums.numel(); ++i) CHECK(std::abs(row_sums.data()[i] - 1.0) <= 1e-12);
  }
}

TEST_CASE("msa rejects heads that do not divide D") {
  ParameterStore<double> store;
  Rng rng(4);
  const auto p = fixture::random_attention(store, rng, 12);
  CHECK_THROWS_AS(msa(T({1, 2, 12}, 0.0), p, 5), ConfigError);
}

TEST_CASE("scale block with zero value and output projections keeps only the FFN path") {
  ParameterStore<double> store;
  Rng rng(5);
  init_block(store, "blk", 8, rng);
  fixture::randomize(store, rng);
  for (const char* name : {"blk.attn.v.w", "blk.attn.v.b", "blk.attn.out.w", "blk.attn.out.b"}) {
    auto t = store.get(name);
    t.mutable_data().setZero();
  }
  const auto p = BlockParams<double>::from(store, "blk");
  const auto x = oracle::random_tensor<double>(rng, {2, 4, 3, 8});
  const auto y = scale_attention_block(x, p, 2);
  const auto hidden = gelu(linear(layer_norm(x, p.ln2_gamma, p.ln2_beta), p.fc1_w, p.fc1_b));
  const auto expect = add(x, linear(hidden, p.fc2_w, p.fc2_b));
  CHECK(oracle::max_abs_diff(oracle::values(y), oracle::values(expect)) <= 1e-13);
}

TEST_CASE("scale block equals the composed loop oracle per patch") {
  ParameterStore<double> store;
  Rng rng(6);
  init_block(store, "blk", 8, rng);
  fixture::randomize(store, rng);
  const auto p = BlockParams<double>::from(store, "blk");
  const Index b = 2, s = 5, n = 3, d = 8;
  const auto x = oracle::random_tensor<double>(rng, {b, s, n, d});
  const auto y = scale_attention_block(x, p, 2);
  CHECK(y.shape() == x.shape());
  double worst = 0.0;
  for (Index bi = 0; bi < b; ++bi) {
    for (Index ni = 0; ni < n; ++ni) {
      oracle::Vec seq;
      for (Index si = 0; si < s; ++si)
        for (Index di = 0; di < d; ++di) seq.push_back(x.at({bi, si, ni, di}));
      const auto ref = fixture::block(seq, s, d, 2, p);
      for (Index si = 0; si < s; ++si)
        for (Index di = 0; di < d; ++di) worst = std::max(worst, std::abs(y.at({bi, si, ni, di}) - ref[si * d + di]));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("scale block has no cross-patch flow") {
  ParameterStore<double> store;
  Rng rng(7);
  init_block(store, "blk", 8, rng);
  fixture::randomize(store, rng);
  const auto p = BlockParams<double>::from(store, "blk");
  auto x = oracle::random_tensor<double>(rng, {2, 4, 3, 8});
  // Identical stacks in patches 0 and 2.
  for (Index b = 0; b < 2; ++b)
    for (Index s = 0; s < 4; ++s)
      for (Index d = 0; d < 8; ++d) x.mutable_data()[((b * 4 + s) * 3 + 2) * 8 + d] = x.at({b, s, 0, d});
  const auto y = scale_attention_block(x, p, 2);
  CHECK(oracle::values(slice(y, 2, 0, 1)) == oracle::values(slice(y, 2, 2, 1)));

  auto bumped = x.clone();
  for (Index s = 0; s < 4; ++s) bumped.mutable_data()[((1 * 4 + s) * 3 + 1) * 8 + 3] += 5.0;
  const auto z = scale_attention_block(bumped, p, 2);
  CHECK(oracle::values(slice(z, 2, 0, 1)) == oracle::values(slice(y, 2, 0, 1)));
  CHECK(oracle::values(slice(z, 2, 2, 1)) == oracle::values(slice(y, 2, 2, 1)));
  CHECK(oracle::values(slice(z, 2, 1, 1)) != oracle::values(slice(y, 2, 1, 1)));
}

TEST_CASE("scale block requires an attached scale token") {
  ParameterStore<double> store;
  Rng rng(8);
  init_block(store, "blk", 4, rng);
  MultiScaleTokens<double> tokens;
  tokens.tokens = T({1, 3, 4, 4}, 0.0);
  CHECK_THROWS_AS(scale_attention_block(tokens, BlockParams<double>::from(store, "blk"), 2), ContractError);
}

TEST_CASE("patch attention is a bare MSA") {
  ParameterStore<double> store;
  Rng rng(9);
  const auto p = fixture::random_attention(store, rng, 32);
  const auto x = oracle::random_tensor<double>(rng, {2, 49, 32});
  const auto y = patch_attention(x, p, 4);
  CHECK(oracle::values(y) == oracle::values(msa(x, p, 4)));
  CHECK(oracle::max_abs_diff(oracle::values(y), oracle::values(x)) > 0.1);
  const auto xv = oracle::values(x), yv = oracle::values(y);
  double worst = 0.0;
  for (int b = 0; b < 2; ++b) {
    const oracle::Vec xs(xv.begin() + b * 49 * 32, xv.begin() + (b + 1) * 49 * 32);
    const auto ref = oracle::attention(xs, 49, 32, 4, fixture::weights_of(p));
    const oracle::Vec got(yv.begin() + b * 49 * 32, yv.begin() + (b + 1) * 49 * 32);
    worst = std::max(worst, oracle::max_abs_diff(got, ref));
  }
  CHECK(worst <= 1e-10);

  const auto single = oracle::random_tensor<double>(rng, {2, 1, 32});
  const auto expect = linear(linear(single, p.wv, p.bv), p.wo, p.bo);
  CHECK(oracle::max_abs_diff(oracle::values(patch_attention(single, p, 4)), oracle::values(expect)) <= 1e-14);
  CHECK_THROWS_AS(patch_attention(T({2, 3, 1, 32}, 0.0), p, 4), DimensionError);
}

TEST_CASE("one-layer encoder composes scale block, slice and patch attention") {
  EncoderFixture f(1, false, 5);
  Rng rng(10);
  const auto tokens = oracle::random_tensor<double>(rng, {2, 5, 4, 16});
  const auto y = encoder(tokens, f.store, f.config);
  const auto scaled = scale_attention_block(tokens, BlockParams<double>::from(f.store, "encoder.layer0.scale"), 4);
  const auto expect = patch_attention(reshape(slice(scaled, 1, 0, 1), {2, 4, 16}),
                                      AttentionParams<double>::from(f.store, "encoder.layer0.patch"), 4);
  CHECK(y.shape() == Shape{2, 4, 16});
  CHECK(oracle::max_abs_diff(oracle::values(y), oracle::values(expect)) <= 1e-13);
}

TEST_CASE("two-layer encoder writes the patch-attention output back into the scale token") {
  EncoderFixture f(2, false, 5);
  Rng rng(11);
  const auto tokens = oracle::random_tensor<double>(rng, {1, 5, 4, 16});
  auto x = scale_attention_block(tokens, BlockParams<double>::from(f.store, "encoder.layer0.scale"), 4);
  const auto y0 = patch_attention(reshape(slice(x, 1, 0, 1), {1, 4, 16}),
                                  AttentionParams<double>::from(f.store, "encoder.layer0.patch"), 4);
  x = concat(std::vector<T>{reshape(y0, {1, 1, 4, 16}), slice(x, 1, 1, 4)}, 1);
  x = scale_attention_block(x, BlockParams<double>::from(f.store, "encoder.layer1.scale"), 4);
  const auto expect = patch_attention(reshape(slice(x, 1, 0, 1), {1, 4, 16}),
                                      AttentionParams<double>::from(f.store, "encoder.layer1.patch"), 4);
  CHECK(oracle::max_abs_diff(oracle::values(encoder(tokens, f.store, f.config)), oracle::values(expect)) <= 1e-13);
}

TEST_CASE("encoder is patch-permutation equivariant without positional embeddings") {
  EncoderFixture f(2, false, 5);
  Rng rng(12);
  const auto tokens = oracle::random_tensor<double>(rng, {2, 5, 4, 16});
  const std::vector<Index> order = {2, 0, 3, 1};
  const auto y = encoder(tokens, f.store, f.config);
  const auto yp = encoder(permuted(tokens, 2, order), f.store, f.config);
  CHECK(oracle::max_abs_diff(oracle::values(yp), oracle::values(permuted(y, 1, order))) <= 1e-12);
}

TEST_CASE("positional embeddings break patch-permutation equivariance") {
  EncoderFixture f(1, true, 5);
  Rng rng(13);
  const auto tokens = oracle::random_tensor<double>(rng, {1, 5, 4, 16});
  const std::vector<Index> order = {1, 0, 2, 3};
  const auto y = encoder(tokens, f.store, f.config);
  const auto yp = encoder(permuted(tokens, 2, order), f.store, f.config);
  CHECK(oracle::max_abs_diff(oracle::values(yp), oracle::values(permuted(y, 1, order))) > 1e-6);
}

TEST_CASE("scale-token slice is invariant to permuting the other scale entries") {
  ParameterStore<double> store;
  Rng rng(14);
  init_block(store, "blk", 16, rng);
  fixture::randomize(store, rng);
  const auto p = BlockParams<double>::from(store, "blk");
  const auto x = oracle::random_tensor<double>(rng, {2, 6, 4, 16});
  const std::vector<Index> order = {0, 4, 2, 5, 1, 3};
  const auto y = scale_attention_block(x, p, 4);
  const auto yp = scale_attention_block(permuted(x, 1, order), p, 4);
  CHECK(oracle::max_abs_diff(oracle::values(slice(yp, 1, 0, 1)), oracle::values(slice(y, 1, 0, 1))) <= 1e-12);
}

TEST_CASE("encoder parameter layout per attention mode") {
  auto c = DuoFormerConfig::toy();
  Rng rng(15);
  ParameterStore<double> duo_store;
  init_encoder(duo_store, c, 22, rng);
  CHECK(duo_store.get("encoder.pos.scale").shape() == Shape{22, 16});
  CHECK(duo_store.get("encoder.pos.patch").shape() == Shape{4, 16});
  CHECK(duo_store.contains("encoder.layer1.patch.q.w"));
  CHECK_FALSE(duo_store.contains("encoder.layer0.scale.attn.k.b"));

  c.attention_mode = AttentionMode::scale_only;
  ParameterStore<double> scale_store;
  init_encoder(scale_store, c, 22, rng);
  CHECK_FALSE(scale_store.contains("encoder.layer0.patch.q.w"));
  CHECK_FALSE(scale_store.contains("encoder.pos.patch"));

  c.attention_mode = AttentionMode::patch_only;
  ParameterStore<double> patch_store;
  init_encoder(patch_store, c, 22, rng);
  CHECK(patch_store.contains("encoder.block1.attn.q.w"));
  CHECK_FALSE(patch_store.contains("encoder.pos.scale"));
}
