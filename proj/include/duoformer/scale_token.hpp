#pragma once

#include "duoformer/backbone.hpp"
#include "duoformer/config.hpp"
#include "duoformer/parameters.hpp"
#include "duoformer/tokenizer.hpp"

namespace duo {

// How one stage is reduced to the √N×√N grid before fusion.
struct DownsamplePlan {
  bool conv = false;  // conv3×3 stride 2 + BN + ReLU, channels preserved
  int pool = 1;       // max-pool kernel = stride; 1 means none
};

// ratio is Pᵢ/√N. Identity for 1; pool only for ratio 2 at stages ≥ 2; conv
// then pool by ratio/2 otherwise. Throws ConfigError for odd ratios above 1.
DownsamplePlan downsample_plan(int stage, int ratio);

// Registers scale_token.down{i}.*, scale_token.fuse.* (fused mode) or
// scale_token.learned [N, D] (learnable mode). Nothing for mode none.
template <typename S>
void init_scale_token(ParameterStore<S>& store, const DuoFormerConfig& config, Rng& rng);

template <typename S>
struct ScaleTokenTrace {
  Tensor<S> concat;  // [B, ΣCᵢ, √N, √N], stages ascending
  Tensor<S> token;   // [B, N, D]
};

// Fused scale token from the raw (unprojected) pyramid.
template <typename S>
ScaleTokenTrace<S> build_scale_token_traced(const ParameterStore<S>& store,
                                            const DuoFormerConfig& config,
                                            const FeaturePyramid<S>& pyramid, NormMode mode);

template <typename S>
Tensor<S> build_scale_token(const ParameterStore<S>& store, const DuoFormerConfig& config,
                            const FeaturePyramid<S>& pyramid, NormMode mode);

// Prepends `token` at scale index 0. token is [B, N, D], or [N, D] which is
// broadcast over the batch. Throws ContractError if a token is already present.
template <typename S>
MultiScaleTokens<S> attach_scale_token(const MultiScaleTokens<S>& tokens, const Tensor<S>& token);

}  // namespace duo
