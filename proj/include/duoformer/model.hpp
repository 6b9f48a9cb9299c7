#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "duoformer/attention.hpp"
#include "duoformer/backbone.hpp"
#include "duoformer/config.hpp"
#include "duoformer/parameters.hpp"
#include "duoformer/scale_token.hpp"
#include "duoformer/serialize.hpp"
#include "duoformer/tokenizer.hpp"

namespace duo {

struct ParameterCount {
  std::int64_t backbone = 0;
  std::int64_t projection = 0;
  std::int64_t scale_token = 0;
  std::int64_t encoder = 0;
  std::int64_t head = 0;

  std::int64_t total() const { return backbone + projection + scale_token + encoder + head; }
  bool operator==(const ParameterCount&) const = default;
};

// D·C + C.
std::int64_t head_parameter_count(int embed_dim, int num_classes);
// Trainable scalars per component, computed from the configuration alone.
ParameterCount count_parameters(const DuoFormerConfig& config);

template <typename S>
class DuoFormer {
 public:
  // Validates the configuration and initializes every parameter from
  // config.seed.
  explicit DuoFormer(const DuoFormerConfig& config);

  const DuoFormerConfig& config() const { return config_; }
  ParameterStore<S>& params() { return store_; }
  const ParameterStore<S>& params() const { return store_; }

  // Training mode puts BatchNorm in batch-statistics mode, except for a
  // frozen backbone (and the scale token that shares its mode).
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  NormMode backbone_mode() const;

  FeaturePyramid<S> backbone(const Tensor<S>& images) const;
  // Projected, tokenized and (when configured) scale-token-attached tokens.
  MultiScaleTokens<S> tokens(const FeaturePyramid<S>& pyramid) const;
  // Input of the classification head, [B, D].
  Tensor<S> readout(const FeaturePyramid<S>& pyramid) const;

  // images is [B, H, W, 3].
  Tensor<S> forward(const Tensor<S>& images) const;
  Tensor<S> forward(const FeaturePyramid<S>& pyramid) const;

  // Sum of trainable tensor sizes grouped the same way as count_parameters.
  ParameterCount parameter_count() const;

  io::Container to_container() const;
  static DuoFormer from_container(const io::Container& container);
  void save(const std::filesystem::path& path) const;
  static DuoFormer load(const std::filesystem::path& path);

 private:
  void check_pyramid(const FeaturePyramid<S>& pyramid) const;

  DuoFormerConfig config_;
  ParameterStore<S> store_;
  bool training_ = false;
};

}  // namespace duo
