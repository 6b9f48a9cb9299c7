#include "duoformer/model.hpp"

#include "duoformer/errors.hpp"

namespace duo {

std::int64_t head_parameter_count(int embed_dim, int num_classes) {
  return std::int64_t{embed_dim} * num_classes + num_classes;
}

ParameterCount count_parameters(const DuoFormerConfig& config) {
  config.validate();
  ParameterCount count;
  const std::int64_t d = config.embed_dim;
  const auto& ch = config.backbone_channels;
  std::int64_t in = 3;
  for (int i = 0; i <= config.deepest_stage(); ++i) {
    count.backbone += 9 * in * ch[i] + 9 * std::int64_t{ch[i]} * ch[i] + 4 * std::int64_t{ch[i]};
    in = ch[i];
  }
  const bool baseline = config.attention_mode == AttentionMode::patch_only;
  const std::vector<int> projected = baseline ? std::vector<int>{config.deepest_stage()} : config.stages;
  for (int i : projected) count.projection += ch[i] * d + d;

  if (!baseline && config.scale_token_mode == ScaleTokenMode::fused) {
    std::int64_t total = 0;
    for (int i : config.stages) {
      total += ch[i];
      if (downsample_plan(i, config.tokens_per_patch_side(i)).conv) {
        count.scale_token += 9 * std::int64_t{ch[i]} * ch[i] + 2 * std::int64_t{ch[i]};
      }
    }
    count.scale_token += total * d + 2 * d;
  } else if (!baseline && config.scale_token_mode == ScaleTokenMode::learnable) {
    count.scale_token = config.patch_count * d;
  }

  const std::int64_t attention = 4 * d * d + 3 * d;
  const std::int64_t block = attention + 4 * d + 8 * d * d + 5 * d;
  const std::int64_t scale_extent =
      config.scale_extent() + (config.scale_token_mode == ScaleTokenMode::none ? 0 : 1);
  switch (config.attention_mode) {
    case AttentionMode::duo:
      count.encoder = config.layers * (block + attention);
      if (config.scale_pos) count.encoder += scale_extent * d;
      if (config.patch_pos) count.encoder += config.patch_count * d;
      break;
    case AttentionMode::scale_only:
      count.encoder = config.layers * block;
      if (config.scale_pos) count.encoder += scale_extent * d;
      break;
    case AttentionMode::patch_only:
      count.encoder = config.baseline_layers * block;
      if (config.patch_pos) count.encoder += config.patch_count * d;
      break;
  }
  count.head = head_parameter_count(config.embed_dim, config.num_classes);
  return count;
}

template <typename S>
DuoFormer<S>::DuoFormer(const DuoFormerConfig& config) : config_(config) {
  config_.validate();
  Rng root(config_.seed);
  Rng backbone_rng = root.split();
  Rng proj_rng = root.split();
  Rng token_rng = root.split();
  Rng encoder_rng = root.split();
  Rng head_rng = root.split();

  init_toy_backbone(store_, config_.backbone_channels, config_.deepest_stage(), backbone_rng);
  const bool baseline = config_.attention_mode == AttentionMode::patch_only;
  init_projection(store_, baseline ? std::vector<int>{config_.deepest_stage()} : config_.stages,
                  config_.backbone_channels, config_.embed_dim, proj_rng);
  if (!baseline) init_scale_token(store_, config_, token_rng);
  const int extent =
      config_.scale_extent() + (config_.scale_token_mode == ScaleTokenMode::none ? 0 : 1);
  init_encoder(store_, config_, extent, encoder_rng);
  store_.add_parameter("head.w", truncated_normal<S>({config_.embed_dim, config_.num_classes}, 0.02, head_rng));
  store_.add_parameter("head.b", Tensor<S>({config_.num_classes}, S(0)));
  if (config_.freeze_backbone) store_.set_frozen("backbone.", true);
}

template <typename S>
NormMode DuoFormer<S>::backbone_mode() const {
  return training_ && !config_.freeze_backbone ? NormMode::train : NormMode::eval;
}

template <typename S>
FeaturePyramid<S> DuoFormer<S>::backbone(const Tensor<S>& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.input_size) {
    throw ConfigError("images " + to_string(images.shape()) + " do not match input_size " +
                      std::to_string(config_.input_size));
  }
  return toy_backbone_forward(store_, images, config_.deepest_stage(), backbone_mode());
}

template <typename S>
void DuoFormer<S>::check_pyramid(const FeaturePyramid<S>& pyramid) const {
  if (pyramid.input_size != config_.input_size) {
    throw ConfigError("pyramid input_size " + std::to_string(pyramid.input_size) +
                      " does not match config input_size " + std::to_string(config_.input_size));
  }
  for (int i : config_.stages) {
    if (!pyramid.has(i)) throw ConfigError("pyramid lacks included stage " + std::to_string(i));
    if (pyramid.at(i).dim(3) != config_.backbone_channels[i]) {
      throw ConfigError("pyramid stage " + std::to_string(i) + " has " +
                        std::to_string(pyramid.at(i).dim(3)) + " channels, config expects " +
                        std::to_string(config_.backbone_channels[i]));
    }
  }
}

template <typename S>
MultiScaleTokens<S> DuoFormer<S>::tokens(const FeaturePyramid<S>& pyramid) const {
  check_pyramid(pyramid);
  const bool baseline = config_.attention_mode == AttentionMode::patch_only;
  const std::vector<int> stages = baseline ? std::vector<int>{config_.deepest_stage()} : config_.stages;
  auto t = tokenize(project(pyramid, store_, stages), config_.patch_count);
  if (baseline) return t;
  switch (config_.scale_token_mode) {
    case ScaleTokenMode::fused:
      return attach_scale_token(t, build_scale_token(store_, config_, pyramid, backbone_mode()));
    case ScaleTokenMode::learnable:
      return attach_scale_token(t, store_.get("scale_token.learned"));
    case ScaleTokenMode::none:
      break;
  }
  return t;
}

template <typename S>
Tensor<S> DuoFormer<S>::readout(const FeaturePyramid<S>& pyramid) const {
  const auto t = tokens(pyramid);
  switch (config_.attention_mode) {
    case AttentionMode::duo:
      return mean(encoder(t.tokens, store_, config_), 1);
    case AttentionMode::scale_only:
      return mean(scale_encoder(t.tokens, store_, config_), 1);
    case AttentionMode::patch_only:
      return mean(baseline_encoder(mean(t.tokens, 1), store_, config_), 1);
  }
  throw ConfigError("unknown attention mode");
}

template <typename S>
Tensor<S> DuoFormer<S>::forward(const FeaturePyramid<S>& pyramid) const {
  return linear(readout(pyramid), store_.get("head.w"), store_.get("head.b"));
}

template <typename S>
Tensor<S> DuoFormer<S>::forward(const Tensor<S>& images) const {
  return forward(backbone(images));
}

template <typename S>
ParameterCount DuoFormer<S>::parameter_count() const {
  ParameterCount count;
  for (const auto& e : store_.entries()) {
    if (!e.trainable) continue;
    const auto group = parameter_group(e.name);
    const auto n = e.tensor.numel();
    if (group == "backbone") count.backbone += n;
    else if (group == "proj") count.projection += n;
    else if (group == "scale_token") count.scale_token += n;
    else if (group == "head") count.head += n;
    else count.encoder += n;
  }
  return count;
}

template <typename S>
io::Container DuoFormer<S>::to_container() const {
  io::Container c;
  c.put("config", io::from_text(serialize_model_config(config_)));
  for (const auto& e : store_.entries()) c.put(e.name, io::to_record(e.tensor));
  return c;
}

template <typename S>
DuoFormer<S> DuoFormer<S>::from_container(const io::Container& container) {
  const auto* text = container.find("config");
  if (!text) throw FormatError("checkpoint has no 'config' entry");
  DuoFormer model(parse_model_config(io::to_text(*text)));
  for (const auto& e : model.store_.entries()) {
    const auto* r = container.find(e.name);
    if (!r) throw FormatError("checkpoint is missing entry '" + e.name + "'");
    Tensor<S> loaded;
    try {
      loaded = io::to_tensor<S>(*r);
    } catch (const Error& err) {
      throw FormatError("entry '" + e.name + "': " + err.what());
    }
    if (loaded.shape() != e.tensor.shape()) {
      throw FormatError("entry '" + e.name + "' has shape " + to_string(loaded.shape()) +
                        ", expected " + to_string(e.tensor.shape()));
    }
    auto target = e.tensor;
    target.mutable_data() = loaded.data();
  }
  for (const auto& [name, r] : container.entries) {
    if (name != "config" && !model.store_.contains(name)) {
      throw FormatError("checkpoint has unexpected entry '" + name + "'");
    }
  }
  return model;
}

template <typename S>
void DuoFormer<S>::save(const std::filesystem::path& path) const {
  io::save_container(path, to_container());
}

template <typename S>
DuoFormer<S> DuoFormer<S>::load(const std::filesystem::path& path) {
  const auto c = io::load_container(path);
  try {
    return from_container(c);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template class DuoFormer<float>;
template class DuoFormer<double>;

}  // namespace duo
