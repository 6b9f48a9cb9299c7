#include "duoformer/attention.hpp"

#include <cmath>

#include "duoformer/errors.hpp"

namespace duo {

template <typename S>
AttentionParams<S> AttentionParams<S>::from(const ParameterStore<S>& store, const std::string& prefix) {
  return {store.get(prefix + ".q.w"), store.get(prefix + ".q.b"), store.get(prefix + ".k.w"),
          store.get(prefix + ".v.w"), store.get(prefix + ".v.b"), store.get(prefix + ".out.w"),
          store.get(prefix + ".out.b")};
}

template <typename S>
BlockParams<S> BlockParams<S>::from(const ParameterStore<S>& store, const std::string& prefix) {
  return {store.get(prefix + ".ln1.gamma"),
          store.get(prefix + ".ln1.beta"),
          AttentionParams<S>::from(store, prefix + ".attn"),
          store.get(prefix + ".ln2.gamma"),
          store.get(prefix + ".ln2.beta"),
          store.get(prefix + ".ffn.fc1.w"),
          store.get(prefix + ".ffn.fc1.b"),
          store.get(prefix + ".ffn.fc2.w"),
          store.get(prefix + ".ffn.fc2.b")};
}

template <typename S>
void init_attention(ParameterStore<S>& store, const std::string& prefix, int dim, Rng& rng,
                    double value_sigma) {
  const Index d = dim;
  for (const char* name : {"q", "k", "v", "out"}) {
    const std::string p = prefix + "." + name;
    const bool value_path = name[0] == 'v' || name[0] == 'o';
    const double sigma = value_path && value_sigma > 0.0 ? value_sigma : 0.02;
    store.add_parameter(p + ".w", truncated_normal<S>({d, d}, sigma, rng));
    if (std::string(name) != "k") store.add_parameter(p + ".b", Tensor<S>({d}, S(0)));
  }
}

template <typename S>
void init_block(ParameterStore<S>& store, const std::string& prefix, int dim, Rng& rng) {
  const Index d = dim;
  store.add_parameter(prefix + ".ln1.gamma", Tensor<S>({d}, S(1)));
  store.add_parameter(prefix + ".ln1.beta", Tensor<S>({d}, S(0)));
  init_attention(store, prefix + ".attn", dim, rng);
  store.add_parameter(prefix + ".ln2.gamma", Tensor<S>({d}, S(1)));
  store.add_parameter(prefix + ".ln2.beta", Tensor<S>({d}, S(0)));
  store.add_parameter(prefix + ".ffn.fc1.w", truncated_normal<S>({d, 4 * d}, 0.02, rng));
  store.add_parameter(prefix + ".ffn.fc1.b", Tensor<S>({4 * d}, S(0)));
  store.add_parameter(prefix + ".ffn.fc2.w", truncated_normal<S>({4 * d, d}, 0.02, rng));
  store.add_parameter(prefix + ".ffn.fc2.b", Tensor<S>({d}, S(0)));
}

template <typename S>
Tensor<S> msa(const Tensor<S>& x, const AttentionParams<S>& params, int heads, Tensor<S>* weights) {
  if (x.rank() < 2) throw DimensionError("msa expects [..., T, D], got " + to_string(x.shape()));
  const Index t = x.dim(-2), d = x.dim(-1);
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("embedding dim " + std::to_string(d) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;
  const Index m = x.numel() / (t * d);
  const auto flat = reshape(x, {m, t, d});
  auto split = [&](const Tensor<S>& y) {
    return permute(reshape(y, {m, t, Index(heads), dh}), {0, 2, 1, 3});
  };
  const auto q = split(linear(flat, params.wq, params.bq));
  const auto k = split(linear(flat, params.wk, Tensor<S>()));
  const auto v = split(linear(flat, params.wv, params.bv));
  const S factor = S(1) / std::sqrt(static_cast<S>(dh));
  const auto attn = softmax(scale(matmul(q, transpose(k, 2, 3)), factor), 3);
  if (weights) {
    Shape ws(x.shape().begin(), x.shape().end() - 2);
    ws.insert(ws.end(), {Index(heads), t, t});
    *weights = reshape(attn, ws);
  }
  const auto merged = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {m, t, d});
  return reshape(linear(merged, params.wo, params.bo), x.shape());
}

template <typename S>
Tensor<S> transformer_block(const Tensor<S>& x, const BlockParams<S>& p, int heads) {
  const auto h = add(x, msa(layer_norm(x, p.ln1_gamma, p.ln1_beta), p.attn, heads));
  const auto hidden = gelu(linear(layer_norm(h, p.ln2_gamma, p.ln2_beta), p.fc1_w, p.fc1_b));
  return add(h, linear(hidden, p.fc2_w, p.fc2_b));
}

template <typename S>
Tensor<S> scale_attention_block(const Tensor<S>& x, const BlockParams<S>& params, int heads) {
  if (x.rank() != 4) throw DimensionError("expected [B, S+1, N, D], got " + to_string(x.shape()));
  const auto y = transformer_block(permute(x, {0, 2, 1, 3}), params, heads);
  return permute(y, {0, 2, 1, 3});
}

template <typename S>
Tensor<S> scale_attention_block(const MultiScaleTokens<S>& tokens, const BlockParams<S>& params,
                                int heads) {
  if (!tokens.has_scale_token) throw ContractError("scale attention requires an attached scale token");
  return scale_attention_block(tokens.tokens, params, heads);
}

template <typename S>
Tensor<S> patch_attention(const Tensor<S>& x, const AttentionParams<S>& params, int heads) {
  if (x.rank() != 3) throw DimensionError("expected [B, N, D], got " + to_string(x.shape()));
  return msa(x, params, heads);
}

namespace {

std::string layer_prefix(int l) { return "encoder.layer" + std::to_string(l); }

}  // namespace

template <typename S>
void init_encoder(ParameterStore<S>& store, const DuoFormerConfig& config, int scale_extent, Rng& rng) {
  const Index d = config.embed_dim;
  if (config.attention_mode == AttentionMode::patch_only) {
    if (config.patch_pos) store.add_parameter("encoder.pos.patch", Tensor<S>({config.patch_count, d}, S(0)));
    for (int l = 0; l < config.baseline_layers; ++l) {
      init_block(store, "encoder.block" + std::to_string(l), config.embed_dim, rng);
    }
    return;
  }
  if (config.scale_pos) store.add_parameter("encoder.pos.scale", Tensor<S>({scale_extent, d}, S(0)));
  const bool duo = config.attention_mode == AttentionMode::duo;
  if (duo && config.patch_pos) {
    store.add_parameter("encoder.pos.patch", Tensor<S>({config.patch_count, d}, S(0)));
  }
  for (int l = 0; l < config.layers; ++l) {
    init_block(store, layer_prefix(l) + ".scale", config.embed_dim, rng);
    if (duo) init_attention(store, layer_prefix(l) + ".patch", config.embed_dim, rng, 1.0 / std::sqrt(double(d)));
  }
}

namespace {

// [B, S', N, D] → [B, N, S', D] with the scale positional embedding added.
template <typename S>
Tensor<S> enter_scale_layout(const Tensor<S>& tokens, const ParameterStore<S>& store) {
  if (tokens.rank() != 4) throw DimensionError("expected [B, S', N, D], got " + to_string(tokens.shape()));
  auto x = permute(tokens, {0, 2, 1, 3});
  if (const auto pos = store.find("encoder.pos.scale"); pos.defined()) {
    if (pos.dim(0) != x.dim(2)) {
      throw DimensionError("scale positional embedding " + to_string(pos.shape()) +
                           " does not match scale extent " + std::to_string(x.dim(2)));
    }
    x = add(x, pos);
  }
  return x;
}

}  // namespace

template <typename S>
Tensor<S> encoder(const Tensor<S>& tokens, const ParameterStore<S>& store,
                  const DuoFormerConfig& config) {
  if (config.layers < 1) throw ConfigError("layers must be >= 1");
  auto x = enter_scale_layout(tokens, store);
  const Index b = x.dim(0), n = x.dim(1), s = x.dim(2), d = x.dim(3);
  const bool average = config.readout == Readout::avg_tokens;
  const auto patch_pos = store.find("encoder.pos.patch");
  Tensor<S> y;
  for (int l = 0; l < config.layers; ++l) {
    x = transformer_block(x, BlockParams<S>::from(store, layer_prefix(l) + ".scale"), config.heads);
    auto conduit = average ? mean(x, 2) : reshape(slice(x, 2, 0, 1), {b, n, d});
    if (l == 0 && patch_pos.defined()) conduit = add(conduit, patch_pos);
    y = patch_attention(conduit, AttentionParams<S>::from(store, layer_prefix(l) + ".patch"),
                        config.heads);
    if (l + 1 < config.layers) {
      auto head = reshape(y, {b, n, 1, d});
      x = s > 1 ? concat(std::vector<Tensor<S>>{head, slice(x, 2, 1, s - 1)}, 2) : head;
    }
  }
  return y;
}

template <typename S>
Tensor<S> scale_encoder(const Tensor<S>& tokens, const ParameterStore<S>& store,
                        const DuoFormerConfig& config) {
  auto x = enter_scale_layout(tokens, store);
  for (int l = 0; l < config.layers; ++l) {
    x = transformer_block(x, BlockParams<S>::from(store, layer_prefix(l) + ".scale"), config.heads);
  }
  return reshape(slice(x, 2, 0, 1), {x.dim(0), x.dim(1), x.dim(3)});
}

template <typename S>
Tensor<S> baseline_encoder(const Tensor<S>& x, const ParameterStore<S>& store,
                           const DuoFormerConfig& config) {
  auto y = x;
  if (const auto pos = store.find("encoder.pos.patch"); pos.defined()) y = add(y, pos);
  for (int l = 0; l < config.baseline_layers; ++l) {
    y = transformer_block(y, BlockParams<S>::from(store, "encoder.block" + std::to_string(l)),
                          config.heads);
  }
  return y;
}

#define DUO_INSTANTIATE(S)                                                                      \
  template struct AttentionParams<S>;                                                           \
  template struct BlockParams<S>;                                                               \
  template void init_attention<S>(ParameterStore<S>&, const std::string&, int, Rng&, double);  \
  template void init_block<S>(ParameterStore<S>&, const std::string&, int, Rng&);              \
  template Tensor<S> msa<S>(const Tensor<S>&, const AttentionParams<S>&, int, Tensor<S>*);     \
  template Tensor<S> transformer_block<S>(const Tensor<S>&, const BlockParams<S>&, int);       \
  template Tensor<S> scale_attention_block<S>(const Tensor<S>&, const BlockParams<S>&, int);   \
  template Tensor<S> scale_attention_block<S>(const MultiScaleTokens<S>&, const BlockParams<S>&, \
                                              int);                                             \
  template Tensor<S> patch_attention<S>(const Tensor<S>&, const AttentionParams<S>&, int);     \
  template void init_encoder<S>(ParameterStore<S>&, const DuoFormerConfig&, int, Rng&);        \
  template Tensor<S> encoder<S>(const Tensor<S>&, const ParameterStore<S>&, const DuoFormerConfig&); \
  template Tensor<S> scale_encoder<S>(const Tensor<S>&, const ParameterStore<S>&,              \
                                      const DuoFormerConfig&);                                  \
  template Tensor<S> baseline_encoder<S>(const Tensor<S>&, const ParameterStore<S>&,           \
                                         const DuoFormerConfig&);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
