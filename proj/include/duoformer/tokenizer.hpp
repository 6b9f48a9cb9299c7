#pragma once

#include <vector>

#include "duoformer/backbone.hpp"
#include "duoformer/parameters.hpp"

namespace duo {

// Maps the flattened Pᵢ×Pᵢ positions of one stage onto (patch, offset) token
// slots. Patch p covers a contiguous P′×P′ block; patches are row-major over
// the √N×√N grid and offsets row-major inside the block.
struct StageIndexMap {
  int stage = 0;
  int extent = 0;  // Pᵢ
  int side = 0;    // P′ᵢ
  int grid = 0;    // √N
  // position[p * side² + o] is the flattened spatial index feeding slot (p, o).
  std::vector<Index> position;

  int tokens_per_patch() const { return side * side; }
  Index slot_of(Index row, Index col) const;
};

// One entry per stage, in the order the stages are given. Throws ConfigError
// for non-square N or a stage whose P′ᵢ is not a positive integer.
std::vector<StageIndexMap> patch_index_map(int input_size, int patch_count,
                                           const std::vector<int>& stages);

struct ScaleEntry {
  int stage = 0;
  int side = 0;   // P′ᵢ
  int count = 0;  // P′ᵢ²
};

// tokens is [B, S(+1), N, D]; scale entries are ordered deepest stage first.
// When has_scale_token is set, index 0 on the scale axis is the scale token
// and the stage entries start at 1.
template <typename S>
struct MultiScaleTokens {
  Tensor<S> tokens;
  std::vector<ScaleEntry> layout;
  bool has_scale_token = false;

  // Σ P′ᵢ² (excludes the scale token).
  int scale_count() const;
  // Offset of the first entry belonging to `stage` on the scale axis.
  int offset_of(int stage) const;
};

// Registers proj.stage{i}.w [Cᵢ, D] and proj.stage{i}.b [D].
template <typename S>
void init_projection(ParameterStore<S>& store, const std::vector<int>& stages,
                     const std::vector<int>& channels, int embed_dim, Rng& rng);

// Per-position affine map of every listed stage from Cᵢ to D.
template <typename S>
FeaturePyramid<S> project(const FeaturePyramid<S>& pyramid, const ParameterStore<S>& store,
                          const std::vector<int>& stages);

// Gathers the projected pyramid into [B, S, N, D] using the index maps.
template <typename S>
MultiScaleTokens<S> tokenize(const FeaturePyramid<S>& projected, int patch_count);

// Inverse scatter back to a channel-last pyramid (scale token ignored).
template <typename S>
FeaturePyramid<S> untokenize(const MultiScaleTokens<S>& tokens, int input_size, int patch_count);

// Multi-line description of the scale layout, used for the tokenize sidecar.
std::string describe_layout(const std::vector<ScaleEntry>& layout, bool has_scale_token);

}  // namespace duo
