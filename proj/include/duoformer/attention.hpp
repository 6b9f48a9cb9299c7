#pragma once

#include <string>

#include "duoformer/config.hpp"
#include "duoformer/parameters.hpp"
#include "duoformer/tokenizer.hpp"

namespace duo {

// Multi-head self-attention projections. Weights are [D, D], biases [D]. The
// key projection carries no bias: a key bias adds the same q·b to every score
// in a row and cancels in the softmax.
template <typename S>
struct AttentionParams {
  Tensor<S> wq, bq, wk, wv, bv, wo, bo;

  static AttentionParams from(const ParameterStore<S>& store, const std::string& prefix);
};

// Pre-norm transformer block: LN, MSA, residual, LN, FFN (D→4D→D, GELU), residual.
template <typename S>
struct BlockParams {
  Tensor<S> ln1_gamma, ln1_beta;
  AttentionParams<S> attn;
  Tensor<S> ln2_gamma, ln2_beta;
  Tensor<S> fc1_w, fc1_b, fc2_w, fc2_b;

  static BlockParams from(const ParameterStore<S>& store, const std::string& prefix);
};

// Registers `prefix.{q,k,v,out}.*`. Weights are truncated normal with σ = 0.02,
// except v and out, which use `value_sigma` when it is positive.
template <typename S>
void init_attention(ParameterStore<S>& store, const std::string& prefix, int dim, Rng& rng,
                    double value_sigma = 0.0);
// Registers `prefix.ln1.*`, `prefix.attn.*`, `prefix.ln2.*`, `prefix.ffn.fc{1,2}.*`.
template <typename S>
void init_block(ParameterStore<S>& store, const std::string& prefix, int dim, Rng& rng);

// Scaled dot-product attention over axis -2 of x[..., T, D]; all leading axes
// are batch. When `weights` is given it receives the attention matrix
// [..., h, T, T].
template <typename S>
Tensor<S> msa(const Tensor<S>& x, const AttentionParams<S>& params, int heads,
              Tensor<S>* weights = nullptr);

// Block over axis -2 of x[..., T, D].
template <typename S>
Tensor<S> transformer_block(const Tensor<S>& x, const BlockParams<S>& params, int heads);

// Scale attention on x[B, S+1, N, D]: the block runs over the scale axis
// independently for every (batch, patch) pair.
template <typename S>
Tensor<S> scale_attention_block(const Tensor<S>& x, const BlockParams<S>& params, int heads);
// Same, but refuses a token tensor without a scale token.
template <typename S>
Tensor<S> scale_attention_block(const MultiScaleTokens<S>& tokens, const BlockParams<S>& params,
                                int heads);

// A single MSA over the patch axis of x[B, N, D]; no LN, FFN or residual.
template <typename S>
Tensor<S> patch_attention(const Tensor<S>& x, const AttentionParams<S>& params, int heads);

// Registers the encoder parameters for `config` given the scale extent of the
// token tensor it will receive (S+1 with a scale token, S without). Patch
// attention has no residual path, so its v and out projections start at
// σ = 1/√D (unit gain through W_v·W_o) instead of 0.02.
template <typename S>
void init_encoder(ParameterStore<S>& store, const DuoFormerConfig& config, int scale_extent, Rng& rng);

// Duo encoder. tokens is [B, S', N, D]; returns the last patch-attention output
// [B, N, D]. The conduit into patch attention is scale index 0, or the mean over
// scale entries for readout avg_tokens; its patch-attention output replaces
// scale index 0 before the next layer.
template <typename S>
Tensor<S> encoder(const Tensor<S>& tokens, const ParameterStore<S>& store,
                  const DuoFormerConfig& config);

// L scale blocks only; returns the final scale-token slice [B, N, D].
template <typename S>
Tensor<S> scale_encoder(const Tensor<S>& tokens, const ParameterStore<S>& store,
                        const DuoFormerConfig& config);

// Plain transformer over patch tokens x[B, N, D] (baseline_layers blocks).
template <typename S>
Tensor<S> baseline_encoder(const Tensor<S>& x, const ParameterStore<S>& store,
                           const DuoFormerConfig& config);

}  // namespace duo
