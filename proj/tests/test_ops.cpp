#include <doctest.h>

#include <cmath>
#include <numeric>

#include "duoformer/autograd.hpp"
#include "duoformer/ops.hpp"
#include "oracles.hpp"

using namespace duo;
using T = Tensor<double>;
using TF = Tensor<float>;

TEST_CASE("matmul identity and selector") {
  const T eye = T::from_values({2, 2}, {1, 0, 0, 1});
  const T m = T::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(oracle::values(matmul(eye, m)) == oracle::Vec{1, 2, 3, 4});
  const T sel = T::from_values({2, 2}, {1, 0, 0, 0});
  const T n = T::from_values({2, 2}, {5, 6, 7, 8});
  CHECK(oracle::values(matmul(sel, n)) == oracle::Vec{5, 6, 0, 0});
}

TEST_CASE("matmul matches triple loop") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = 1 + static_cast<int>(rng.below(5)), k = 1 + static_cast<int>(rng.below(5)),
              n = 1 + static_cast<int>(rng.below(5));
    const auto a = oracle::random_vec(rng, m * k), b = oracle::random_vec(rng, k * n);
    const T c = matmul(oracle::tensor<double>({m, k}, a), oracle::tensor<double>({k, n}, b));
    CHECK(oracle::max_abs_diff(oracle::values(c), oracle::matmul(a, b, m, k, n)) <= 1e-12);
  }
  const auto a = oracle::random_vec(rng, 12), b = oracle::random_vec(rng, 8);
  const T c = matmul(oracle::tensor<double>({3, 4}, a), oracle::tensor<double>({4, 2}, b));
  CHECK(oracle::max_abs_diff(oracle::values(c), oracle::matmul(a, b, 3, 4, 2)) <= 1e-12);
}

TEST_CASE("matmul batched with broadcast leading extents") {
  Rng rng(3);
  const T a = oracle::random_tensor<double>(rng, {2, 3, 4, 5});
  const T b = oracle::random_tensor<double>(rng, {3, 5, 2});
  const T c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 3, 4, 2});
  const auto av = oracle::values(a), bv = oracle::values(b), cv = oracle::values(c);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      oracle::Vec as(av.begin() + (i * 3 + j) * 20, av.begin() + (i * 3 + j + 1) * 20);
      oracle::Vec bs(bv.begin() + j * 10, bv.begin() + (j + 1) * 10);
      oracle::Vec cs(cv.begin() + (i * 3 + j) * 8, cv.begin() + (i * 3 + j + 1) * 8);
      CHECK(oracle::max_abs_diff(cs, oracle::matmul(as, bs, 4, 5, 2)) <= 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const T a(Shape{2, 3}), b(Shape{4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("softmax closed forms") {
  CHECK(oracle::values(softmax(T::from_values({2}, {0, 0}), 0)) == oracle::Vec{0.5, 0.5});
  const auto y = oracle::values(softmax(T::from_values({2}, {std::log(2.0), 0.0}), 0));
  CHECK(y[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));
  const auto big = oracle::values(softmax(TF::from_values({2}, {1000.f, 1000.f}), 0));
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);
}

TEST_CASE("softmax rows sum to one for large magnitudes") {
  Rng rng(5);
  const TF xf = oracle::random_tensor<float>(rng, {16, 9}, -1e4, 1e4);
  const T xd = oracle::random_tensor<double>(rng, {16, 9}, -1e4, 1e4);
  const auto yf = oracle::values(softmax(xf, 1));
  const auto yd = oracle::values(softmax(xd, -1));
  for (int r = 0; r < 16; ++r) {
    double sf = 0, sd = 0;
    for (int c = 0; c < 9; ++c) {
      sf += yf[r * 9 + c];
      sd += yd[r * 9 + c];
      CHECK(yd[r * 9 + c] >= 0.0);
    }
    CHECK(std::abs(sf - 1.0) <= 1e-6);
    CHECK(std::abs(sd - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax along a middle axis matches per-slice oracle") {
  Rng rng(8);
  const T x = oracle::random_tensor<double>(rng, {2, 4, 3});
  const auto y = oracle::values(softmax(x, 1));
  const auto xv = oracle::values(x);
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i) {
      oracle::Vec slice;
      for (int a = 0; a < 4; ++a) slice.push_back(xv[(o * 4 + a) * 3 + i]);
      const auto ref = oracle::softmax(slice);
      for (int a = 0; a < 4; ++a) CHECK(std::abs(y[(o * 4 + a) * 3 + i] - ref[a]) <= 1e-15);
    }
}

TEST_CASE("layer_norm examples") {
  const T ones = T::from_values({2}, {1, 1});
  const T zeros = T::from_values({2}, {0, 0});
  const auto y = oracle::values(layer_norm(T::from_values({2}, {1, -1}), ones, zeros, 1e-6));
  CHECK(std::abs(y[0] - 1) <= 1e-5);
  CHECK(std::abs(y[1] + 1) <= 1e-5);
  CHECK(oracle::values(layer_norm(T::from_values({2}, {5, 5}), ones, zeros, 1e-6)) ==
        oracle::Vec{0, 0});

  Rng rng(2);
  const auto x = oracle::random_vec(rng, 8, -3, 3);
  const auto out = oracle::values(
      layer_norm(oracle::tensor<double>({8}, x), T(Shape{8}, 1.0), T(Shape{8}, 0.0), 1e-6));
  CHECK(oracle::max_abs_diff(out, oracle::layer_norm(x, 1e-6)) <= 1e-10);
}

TEST_CASE("conv2d examples") {
  Rng rng(4);
  const T x = oracle::random_tensor<double>(rng, {1, 4, 4});
  const T id = T::from_values({1, 1, 1, 1}, {1});
  CHECK(oracle::values(conv2d(x, id, T(), 1, 0)) == oracle::values(x));

  const T c(Shape{1, 5, 5}, 0.7);
  const T ones(Shape{1, 1, 3, 3}, 1.0);
  for (double v : oracle::values(conv2d(c, ones, T(), 1, 0))) {
    CHECK(v == doctest::Approx(9 * 0.7).epsilon(1e-15));
  }

  for (int stride = 1; stride <= 2; ++stride) {
    for (int pad = 0; pad <= 1; ++pad) {
      const auto xv = oracle::random_vec(rng, 2 * 5 * 5), wv = oracle::random_vec(rng, 3 * 2 * 9);
      const T y = conv2d(oracle::tensor<double>({2, 5, 5}, xv),
                         oracle::tensor<double>({3, 2, 3, 3}, wv), T(), stride, pad);
      const int ho = (5 + 2 * pad - 3) / stride + 1;
      CHECK(y.shape() == Shape{3, ho, ho});
      CHECK(oracle::max_abs_diff(oracle::values(y),
                                 oracle::conv2d(xv, wv, 2, 5, 5, 3, 3, stride, pad)) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d rejects kernel larger than padded input") {
  CHECK_THROWS_AS(conv2d(T(Shape{1, 2, 2}), T(Shape{1, 1, 3, 3}), T(), 1, 0), DimensionError);
  CHECK_NOTHROW(conv2d(T(Shape{1, 2, 2}), T(Shape{1, 1, 3, 3}), T(), 1, 1));
}

TEST_CASE("max_pool2d examples") {
  CHECK(oracle::values(max_pool2d(T::from_values({2, 2}, {1, 2, 3, 4}), 2, 2)) ==
        oracle::Vec{4});
  for (double v : oracle::values(max_pool2d(T(Shape{1, 4, 4}, 3.0), 2, 2))) CHECK(v == 3.0);
  Rng rng(9);
  const auto xv = oracle::random_vec(rng, 64);
  CHECK(oracle::values(max_pool2d(oracle::tensor<double>({1, 8, 8}, xv), 2, 2)) ==
        oracle::max_pool(xv, 1, 8, 8, 2));
  CHECK_THROWS_AS(max_pool2d(T(Shape{1, 5, 4}), 2, 2), DimensionError);
}

TEST_CASE("max_pool2d routes tied gradient to first occurrence") {
  T x(Shape{1, 2, 2}, 1.0);
  x.set_requires_grad(true);
  backward(sum(max_pool2d(x, 2, 2)));
  CHECK(oracle::values(T(Shape{4}, x.grad())) == oracle::Vec{1, 0, 0, 0});
}

TEST_CASE("batch_norm modes") {
  T gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
  RunningStats<double> stats{T(Shape{2}, 0.0), T(Shape{2}, 1.0)};
  const T x = T::from_values({2, 2}, {0.3, -2.0, 1.5, 4.0});
  const auto y = oracle::values(batch_norm(x, gamma, beta, stats, NormMode::eval));
  const double k = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(oracle::max_abs_diff(y, {0.3 * k, -2.0 * k, 1.5 * k, 4.0 * k}) <= 1e-15);

  const T pm = T::from_values({2, 2}, {-1, -1, 1, 1});
  const auto z = oracle::values(batch_norm(pm, gamma, beta, stats, NormMode::train));
  CHECK(oracle::max_abs_diff(z, {-1, -1, 1, 1}) <= 1e-5);
  // momentum 0.1 toward mean 0, unbiased variance 2
  CHECK(stats.mean.data()[0] == doctest::Approx(0.0));
  CHECK(stats.var.data()[0] == doctest::Approx(0.9 + 0.1 * 2.0));

  CHECK_THROWS_AS(batch_norm(T(Shape{1, 2}), gamma, beta, stats, NormMode::train), NumericError);
}

TEST_CASE("batch_norm train output matches direct formula") {
  Rng rng(21);
  const auto xv = oracle::random_vec(rng, 3 * 2 * 2 * 2);
  const T x = oracle::tensor<double>({3, 2, 2, 2}, xv);
  const T gamma = T::from_values({2}, {1.5, 0.5});
  const T beta = T::from_values({2}, {0.1, -0.2});
  RunningStats<double> stats{T(Shape{2}, 0.0), T(Shape{2}, 1.0)};
  const auto y = oracle::values(batch_norm(x, gamma, beta, stats, NormMode::train));
  for (int c = 0; c < 2; ++c) {
    oracle::Vec vals;
    for (int b = 0; b < 3; ++b)
      for (int s = 0; s < 4; ++s) vals.push_back(xv[(b * 2 + c) * 4 + s]);
    const auto ref = oracle::layer_norm(vals, 1e-5);  // same formula per channel
    int i = 0;
    for (int b = 0; b < 3; ++b)
      for (int s = 0; s < 4; ++s, ++i) {
        const double expect = ref[i] * gamma.data()[c] + beta.data()[c];
        CHECK(std::abs(y[(b * 2 + c) * 4 + s] - expect) <= 1e-10);
      }
  }
}

TEST_CASE("backward analytic examples") {
  T x = T::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  backward(sum(x));
  CHECK(oracle::values(T(Shape{6}, x.grad())) == oracle::Vec(6, 1.0));

  T y = T::from_values({3}, {1, 2, 3});
  y.set_requires_grad(true);
  const T loss = sum(mul(y, y));
  backward(loss);
  CHECK(oracle::values(T(Shape{3}, y.grad())) == oracle::Vec{2, 4, 6});
  backward(loss);
  CHECK(oracle::values(T(Shape{3}, y.grad())) == oracle::Vec{4, 8, 12});
  y.zero_grad();
  CHECK(oracle::values(T(Shape{3}, y.grad())) == oracle::Vec{0, 0, 0});

  CHECK_THROWS_AS(backward(mul(y, y)), ContractError);
}

TEST_CASE("reshape and permute round trips") {
  Rng rng(1);
  const T x = oracle::random_tensor<double>(rng, {2, 3, 4});
  CHECK(oracle::values(reshape(reshape(x, {4, 6}), {2, 3, 4})) == oracle::values(x));
  CHECK(reshape(x, {-1, 4}).shape() == Shape{6, 4});
  const std::vector<int> perm{2, 0, 1}, inverse{1, 2, 0};
  const T p = permute(x, perm);
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.at({3, 1, 2}) == x.at({1, 2, 3}));
  CHECK(oracle::values(permute(p, inverse)) == oracle::values(x));
  CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
}

TEST_CASE("concat slice index_select") {
  const T a = T::from_values({2, 1}, {1, 2});
  const T b = T::from_values({2, 2}, {3, 4, 5, 6});
  const T c = concat<double>({a, b}, 1);
  CHECK(oracle::values(c) == oracle::Vec{1, 3, 4, 2, 5, 6});
  CHECK(oracle::values(slice(c, 1, 1, 2)) == oracle::values(b));
  CHECK(oracle::values(index_select(c, 1, {2, 0})) == oracle::Vec{4, 1, 6, 2});
  CHECK_THROWS_AS(slice(c, 1, 2, 2), DimensionError);
  CHECK_THROWS_AS(concat<double>({a, T(Shape{3, 1})}, 1), DimensionError);
}

TEST_CASE("mean sum gelu relu cross_entropy values") {
  const T x = T::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(mean(x).item() == 2.5);
  CHECK(oracle::values(mean(x, 0)) == oracle::Vec{2, 3});
  CHECK(oracle::values(sum(x, 1, true)) == oracle::Vec{3, 7});
  CHECK(oracle::values(relu(T::from_values({3}, {-1, 0, 2}))) == oracle::Vec{0, 0, 2});
  const auto g = oracle::values(gelu(T::from_values({3}, {0, 1, -1})));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(0.8411919906082768).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(-0.15880800939172324).epsilon(1e-12));
  // uniform logits -> log(C)
  CHECK(cross_entropy(T(Shape{2, 4}, 0.3), {1, 3}).item() == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(cross_entropy(T(Shape{2, 4}), {1, 4}), ContractError);
}

TEST_CASE("non-finite forward values are surfaced") {
  CHECK_THROWS_AS(log(T::from_values({1}, {-1.0})), NumericError);
  CHECK_THROWS_AS(div(T::from_values({1}, {1.0}), T::from_values({1}, {0.0})), NumericError);
}

TEST_CASE("broadcasting add and mul") {
  const T a = T::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  const T b = T::from_values({3}, {10, 20, 30});
  CHECK(oracle::values(add(a, b)) == oracle::Vec{11, 22, 33, 14, 25, 36});
  const T col = T::from_values({2, 1}, {2, 3});
  CHECK(oracle::values(mul(a, col)) == oracle::Vec{2, 4, 6, 12, 15, 18});
  CHECK_THROWS_AS(add(a, T(Shape{2})), DimensionError);
}

// ---- gradient checks, three random shapes per operation --------------------

namespace {

double check_unary(const std::function<T(const T&)>& op, const Shape& shape, std::uint64_t seed,
                   double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  T x = oracle::random_tensor<double>(rng, shape, lo, hi);
  const T w = oracle::random_tensor<double>(rng, op(x).shape());
  return grad_check([&] { return sum(mul(op(x), w)); }, {x}).max_relative_error;
}

}  // namespace

TEST_CASE("grad_check scalar square") {
  T x = T::from_values({1}, {3.0});
  CHECK(grad_check([&] { return sum(mul(x, x)); }, {x}).max_relative_error < 1e-9);
}

TEST_CASE("grad_check of softmax cross-entropy") {
  Rng rng(17);
  T logits = oracle::random_tensor<double>(rng, {1, 7}, -2, 2);
  CHECK(grad_check([&] { return cross_entropy(logits, {3}); }, {logits}).max_relative_error <
        1e-6);
}

TEST_CASE("every differentiable op passes grad_check on three shapes") {
  const std::vector<Shape> shapes{{3}, {2, 5}, {2, 3, 4}};
  std::uint64_t seed = 100;
  for (const auto& s : shapes) {
    CAPTURE(to_string(s));
    CHECK(check_unary([](const T& x) { return relu(x); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return gelu(x); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return exp(x); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return log(x); }, s, seed++, 0.5, 2.0) < 1e-4);
    CHECK(check_unary([](const T& x) { return softmax(x, -1); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return softmax(x, 0); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return log_softmax(x, -1); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return mean(x, 0); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return sum(x, -1, true); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return scale(add_scalar(x, 0.5), 3.0); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return reshape(x, {-1}); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return slice(x, 0, 1, x.dim(0) - 1); }, s, seed++) < 1e-4);
    CHECK(check_unary([](const T& x) { return index_select(x, -1, {0, 0, 1}); }, s, seed++) <
          1e-4);
    CHECK(check_unary([](const T& x) { return concat<double>({x, mul(x, x)}, 0); }, s, seed++) <
          1e-4);
    CHECK(check_unary(
              [](const T& x) {
                std::vector<int> perm(x.rank());
                std::iota(perm.rbegin(), perm.rend(), 0);
                return permute(x, perm);
              },
              s, seed++) < 1e-4);
    Rng rng(seed++);
    T a = oracle::random_tensor<double>(rng, s);
    T b = oracle::random_tensor<double>(rng, {s.back()}, 0.5, 1.5);
    CHECK(grad_check([&] { return sum(mul(div(sub(a, b), b), add(a, b))); }, {a, b})
              .max_relative_error < 1e-4);
    T gamma = oracle::random_tensor<double>(rng, {s.back()});
    T beta = oracle::random_tensor<double>(rng, {s.back()});
    const T w = oracle::random_tensor<double>(rng, s);
    CHECK(grad_check([&] { return sum(mul(layer_norm(a, gamma, beta), w)); }, {a, gamma, beta})
              .max_relative_error < 1e-4);
  }
}

TEST_CASE("matmul and linear grad_check") {
  Rng rng(31);
  for (const auto& [sa, sb] : std::vector<std::pair<Shape, Shape>>{
           {{3, 4}, {4, 2}}, {{2, 3, 4}, {4, 5}}, {{2, 3, 4}, {2, 4, 2}}, {{2, 1, 3, 2}, {4, 2, 3}}}) {
    T a = oracle::random_tensor<double>(rng, sa);
    T b = oracle::random_tensor<double>(rng, sb);
    const T w = oracle::random_tensor<double>(rng, matmul(a, b).shape());
    CHECK(grad_check([&] { return sum(mul(matmul(a, b), w)); }, {a, b}).max_relative_error <
          1e-4);
  }
  T x = oracle::random_tensor<double>(rng, {2, 3, 4});
  T weight = oracle::random_tensor<double>(rng, {4, 6});
  T bias = oracle::random_tensor<double>(rng, {6});
  CHECK(grad_check([&] { return sum(gelu(linear(x, weight, bias))); }, {x, weight, bias})
            .max_relative_error < 1e-4);
}

TEST_CASE("conv2d, max_pool2d and batch_norm grad_check") {
  Rng rng(41);
  for (const auto& [shape, stride, pad] :
       std::vector<std::tuple<Shape, int, int>>{{{2, 6, 6}, 1, 1}, {{2, 2, 6, 6}, 2, 1},
                                                 {{3, 1, 5, 5}, 1, 0}}) {
    T x = oracle::random_tensor<double>(rng, shape);
    const Index cin = shape[shape.size() - 3];
    T w = oracle::random_tensor<double>(rng, {3, cin, 3, 3});
    T bias = oracle::random_tensor<double>(rng, {3});
    const T probe = oracle::random_tensor<double>(rng, conv2d(x, w, bias, stride, pad).shape());
    CHECK(grad_check([&] { return sum(mul(conv2d(x, w, bias, stride, pad), probe)); },
                     {x, w, bias})
              .max_relative_error < 1e-4);
  }
  for (const Shape& s : std::vector<Shape>{{1, 4, 4}, {2, 3, 6, 6}, {2, 8, 8}}) {
    T x = oracle::random_tensor<double>(rng, s);
    const T probe = oracle::random_tensor<double>(rng, max_pool2d(x, 2, 2).shape());
    CHECK(grad_check([&] { return sum(mul(max_pool2d(x, 2, 2), probe)); }, {x})
              .max_relative_error < 1e-4);
  }
  for (const Shape& s : std::vector<Shape>{{4, 3}, {2, 3, 2, 2}, {3, 2, 3, 1}}) {
    T x = oracle::random_tensor<double>(rng, s);
    T gamma = oracle::random_tensor<double>(rng, {s[1]}, 0.5, 1.5);
    T beta = oracle::random_tensor<double>(rng, {s[1]});
    RunningStats<double> stats{T(Shape{s[1]}, 0.0), T(Shape{s[1]}, 1.0)};
    const T probe = oracle::random_tensor<double>(rng, s);
    for (NormMode mode : {NormMode::train, NormMode::eval}) {
      CHECK(grad_check([&] { return sum(mul(batch_norm(x, gamma, beta, stats, mode), probe)); },
                       {x, gamma, beta})
                .max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("grad_check detects a broken backward") {
  Rng rng(5);
  T x = oracle::random_tensor<double>(rng, {4});
  GradCheckOptions opts;
  opts.analytic_scale = 1.01;
  CHECK(grad_check([&] { return sum(mul(x, x)); }, {x}, opts).max_relative_error > 1e-3);
}

TEST_CASE("grad_check skips coordinates whose step crosses a relu kink") {
  // x[1] sits within one step of zero: the central difference averages slopes
  // 0 and 1 and disagrees with either one-sided derivative.
  T x = T::from_values({3}, {0.7, 2e-6, -0.4});
  GradCheckOptions opts;
  opts.skip_kinks = false;
  const auto naive = grad_check([&] { return sum(relu(x)); }, {x}, opts);
  CHECK(naive.max_relative_error > 0.1);
  opts.skip_kinks = true;
  const auto skipped = grad_check([&] { return sum(relu(x)); }, {x}, opts);
  CHECK(skipped.skipped_kinks == 1);
  CHECK(skipped.coordinates == 2);
  CHECK(skipped.max_relative_error < 1e-9);
}

TEST_CASE("grad_check skips coordinates that flip a max-pool argmax") {
  T x = T::from_values({1, 1, 2, 2}, {1.0, 1.0 + 5e-5, 0.0, -1.0});
  GradCheckOptions opts;
  const auto r = grad_check([&] { return sum(mul(max_pool2d(x, 2, 2), max_pool2d(x, 2, 2))); }, {x}, opts);
  CHECK(r.skipped_kinks == 0);
  T tied = T::from_values({1, 1, 2, 2}, {1.0, 1.0 + 1e-6, 0.0, -1.0});
  const auto t = grad_check([&] { return sum(mul(max_pool2d(tied, 2, 2), max_pool2d(tied, 2, 2))); }, {tied},
                            opts);
  CHECK(t.skipped_kinks == 2);
  CHECK(t.max_relative_error < 1e-6);
}

TEST_CASE("branch trace is inert outside a trace scope") {
  CHECK_FALSE(branch_trace_active());
  std::uint64_t a, b;
  {
    BranchTrace trace;
    relu(T::from_values({2}, {1.0, -1.0}));
    a = trace.signature();
  }
  {
    BranchTrace trace;
    relu(T::from_values({2}, {-1.0, 1.0}));
    b = trace.signature();
  }
  CHECK(a != b);
  CHECK_FALSE(branch_trace_active());
}
