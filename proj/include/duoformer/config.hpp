#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace duo {

enum class ScaleTokenMode { fused, learnable, none };
enum class Readout { scale_token_patch_attn, first_token, avg_tokens, scale_attn_only_fc };
enum class AttentionMode { duo, scale_only, patch_only };
enum class DType { f32, f64 };

std::string to_string(ScaleTokenMode mode);
std::string to_string(Readout readout);
std::string to_string(AttentionMode mode);
std::string to_string(DType dtype);
ScaleTokenMode parse_scale_token_mode(const std::string& text);
Readout parse_readout(const std::string& text);
AttentionMode parse_attention_mode(const std::string& text);
DType parse_dtype(const std::string& text);

// Architecture hyperparameters. Defaults follow the canonical geometry
// (224 px input, 49 patches, D = 768, 8 heads, 6 layers, all four stages).
struct DuoFormerConfig {
  int input_size = 224;
  int patch_count = 49;
  int embed_dim = 768;
  int heads = 8;
  int layers = 6;
  std::vector<int> stages = {0, 1, 2, 3};
  std::vector<int> backbone_channels = {64, 128, 256, 512};
  ScaleTokenMode scale_token_mode = ScaleTokenMode::fused;
  Readout readout = Readout::scale_token_patch_attn;
  AttentionMode attention_mode = AttentionMode::duo;
  int num_classes = 4;
  bool scale_pos = true;
  bool patch_pos = true;
  DType dtype = DType::f32;
  std::uint64_t seed = 0;
  // Depth of the plain transformer used by attention_mode = patch_only.
  int baseline_layers = 12;
  bool freeze_backbone = false;

  // Desk-scale geometry: H = 32, N = 4, D = 16, h = 4, L = 2, stages {0,1,2}.
  static DuoFormerConfig toy();

  int grid() const;                 // √N
  int stage_extent(int stage) const;  // Pᵢ = H / (4·2ⁱ)
  int tokens_per_patch_side(int stage) const;  // P′ᵢ
  int deepest_stage() const { return stages.back(); }
  int scale_extent() const;         // S = Σ P′ᵢ²

  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  bool operator==(const DuoFormerConfig&) const = default;
};

struct TrainConfig {
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 20;
  double max_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Both halves of a plain-text key=value run file.
struct RunConfig {
  DuoFormerConfig model;
  TrainConfig train;

  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

// Model-only subset (used for the checkpoint `config` entry).
DuoFormerConfig parse_model_config(const std::string& text);
std::string serialize_model_config(const DuoFormerConfig& config);

}  // namespace duo
