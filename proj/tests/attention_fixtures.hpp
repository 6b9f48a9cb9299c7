#pragma once

#include <cmath>
#include <string>

#include "duoformer/attention.hpp"
#include "oracles.hpp"

namespace fixture {

// Overwrites every entry of `store` under `prefix` with U(-scale, scale),
// keeping LayerNorm gammas near one, so attention is far from uniform.
inline void randomize(duo::ParameterStore<double>& store, duo::Rng& rng, double scale = 0.5,
                      const std::string& prefix = "") {
  for (const auto& e : store.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    auto& v = e.tensor.node()->value;
    const bool gamma = e.name.ends_with("gamma");
    for (duo::Index i = 0; i < v.size(); ++i) v[i] = (gamma ? 1.0 : 0.0) + scale * (2.0 * rng.uniform() - 1.0);
  }
}

inline duo::AttentionParams<double> random_attention(duo::ParameterStore<double>& store, duo::Rng& rng,
                                                     int dim, const std::string& prefix = "attn") {
  duo::init_attention(store, prefix, dim, rng);
  randomize(store, rng, 0.5, prefix);
  return duo::AttentionParams<double>::from(store, prefix);
}

inline oracle::AttentionWeights weights_of(const duo::AttentionParams<double>& p) {
  return {oracle::values(p.wq), oracle::values(p.bq), oracle::values(p.wk), {},
          oracle::values(p.wv), oracle::values(p.bv), oracle::values(p.wo), oracle::values(p.bo)};
}

inline double gelu(double x) {
  const double c = std::sqrt(2.0 / M_PI);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// Pre-norm block on one sequence x [T, D], assembled from the loop oracles.
inline oracle::Vec block(const oracle::Vec& x, int t, int d, int heads, const duo::BlockParams<double>& p) {
  auto ln = [&](const oracle::Vec& in, const duo::Tensor<double>& g, const duo::Tensor<double>& b) {
    oracle::Vec out(in.size());
    for (int i = 0; i < t; ++i) {
      const oracle::Vec row(in.begin() + i * d, in.begin() + (i + 1) * d);
      const auto n = oracle::layer_norm(row, 1e-6);
      for (int j = 0; j < d; ++j) out[i * d + j] = n[j] * g.data()[j] + b.data()[j];
    }
    return out;
  };
  const auto a = oracle::attention(ln(x, p.ln1_gamma, p.ln1_beta), t, d, heads, weights_of(p.attn));
  oracle::Vec h(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) h[i] = x[i] + a[i];
  auto hidden = oracle::matmul(ln(h, p.ln2_gamma, p.ln2_beta), oracle::values(p.fc1_w), t, d, 4 * d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < 4 * d; ++j) hidden[i * 4 * d + j] = gelu(hidden[i * 4 * d + j] + p.fc1_b.data()[j]);
  const auto out = oracle::matmul(hidden, oracle::values(p.fc2_w), t, 4 * d, d);
  oracle::Vec y(x.size());
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) y[i * d + j] = h[i * d + j] + out[i * d + j] + p.fc2_b.data()[j];
  return y;
}

}  // namespace fixture
