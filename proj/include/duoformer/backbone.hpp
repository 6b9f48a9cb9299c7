#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "duoformer/parameters.hpp"
#include "duoformer/tensor.hpp"

namespace duo {

// Per-stage feature maps in channel-last layout. Stage i has spatial extent
// Pᵢ = H / (4·2ⁱ).
template <typename S>
struct FeaturePyramid {
  int input_size = 0;
  // (stage index, features[B, Pᵢ, Pᵢ, Cᵢ]), stage indices strictly increasing.
  std::vector<std::pair<int, Tensor<S>>> stages;

  bool has(int stage) const;
  // Throws ContractError when the stage is absent.
  const Tensor<S>& at(int stage) const;
  Index batch() const;

  // Checks the invariants; throws FormatError naming the offending entry.
  void validate() const;
};

// Pᵢ for input size H; throws ConfigError unless H/(4·2ⁱ) is an integer.
int stage_extent(int input_size, int stage);

// Registers the toy backbone's parameters for stages 0..max_stage. Stage 0 is a
// stem of two stride-2 conv3×3+BN+ReLU blocks; every later stage is one
// stride-2 and one stride-1 conv3×3+BN+ReLU block.
template <typename S>
void init_toy_backbone(ParameterStore<S>& store, const std::vector<int>& channels, int max_stage,
                       Rng& rng);

// images is [B, H, W, 3] with H = W divisible by 32. Returns stages 0..max_stage.
template <typename S>
FeaturePyramid<S> toy_backbone_forward(const ParameterStore<S>& store, const Tensor<S>& images,
                                       int max_stage, NormMode mode);

// Keeps only the listed stages.
template <typename S>
FeaturePyramid<S> select_stages(const FeaturePyramid<S>& pyramid, const std::vector<int>& stages);

// Batch subset of every stage.
template <typename S>
FeaturePyramid<S> select_batch(const FeaturePyramid<S>& pyramid, const std::vector<Index>& rows);

// DFC1 container with entries `stage0`..`stage3` (any subset) and an i64
// scalar `input_size`.
template <typename S>
void save_pyramid(const std::filesystem::path& path, const FeaturePyramid<S>& pyramid);
template <typename S>
FeaturePyramid<S> load_pyramid(const std::filesystem::path& path);

}  // namespace duo
