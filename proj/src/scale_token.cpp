#include "duoformer/scale_token.hpp"

#include "duoformer/errors.hpp"

namespace duo {

DownsamplePlan downsample_plan(int stage, int ratio) {
  if (ratio == 1) return {};
  if (ratio == 2) return stage >= 2 ? DownsamplePlan{false, 2} : DownsamplePlan{true, 1};
  if (ratio < 1 || ratio % 2 != 0) {
    throw ConfigError("stage " + std::to_string(stage) + ": ratio " + std::to_string(ratio) +
                      " not reducible by stride-2 convolution and pooling");
  }
  return {true, ratio / 2};
}

template <typename S>
void init_scale_token(ParameterStore<S>& store, const DuoFormerConfig& config, Rng& rng) {
  const Index d = config.embed_dim;
  if (config.scale_token_mode == ScaleTokenMode::learnable) {
    store.add_parameter("scale_token.learned", truncated_normal<S>({config.patch_count, d}, 0.02, rng));
    return;
  }
  if (config.scale_token_mode != ScaleTokenMode::fused) return;
  Index total = 0;
  for (int i : config.stages) {
    const Index c = config.backbone_channels[i];
    total += c;
    if (downsample_plan(i, config.tokens_per_patch_side(i)).conv) {
      const std::string p = "scale_token.down" + std::to_string(i);
      add_conv_bn(store, p + ".conv", p + ".bn", c, c, 3, rng);
    }
  }
  add_conv_bn(store, "scale_token.fuse", "scale_token.fuse.bn", d, total, 1, rng);
}

template <typename S>
ScaleTokenTrace<S> build_scale_token_traced(const ParameterStore<S>& store,
                                            const DuoFormerConfig& config,
                                            const FeaturePyramid<S>& pyramid, NormMode mode) {
  if (config.scale_token_mode != ScaleTokenMode::fused) {
    throw ContractError("build_scale_token requires scale_token_mode=fused");
  }
  std::vector<Tensor<S>> reduced;
  for (int i : config.stages) {
    auto x = permute(pyramid.at(i), {0, 3, 1, 2});
    const auto plan = downsample_plan(i, config.tokens_per_patch_side(i));
    if (plan.conv) {
      const std::string p = "scale_token.down" + std::to_string(i);
      x = conv_bn_relu(store, x, p + ".conv", p + ".bn", 2, 1, mode);
    }
    if (plan.pool > 1) x = max_pool2d(x, plan.pool, plan.pool);
    if (x.dim(2) != config.grid() || x.dim(3) != config.grid()) {
      throw DimensionError("stage " + std::to_string(i) + " reduced to " + to_string(x.shape()) +
                           ", expected a " + std::to_string(config.grid()) + "x" +
                           std::to_string(config.grid()) + " grid");
    }
    reduced.push_back(x);
  }
  ScaleTokenTrace<S> out;
  out.concat = reduced.size() == 1 ? reduced.front() : concat(reduced, 1);
  const auto fused = conv_bn_relu(store, out.concat, "scale_token.fuse", "scale_token.fuse.bn", 1, 0, mode);
  const Index b = fused.dim(0), d = fused.dim(1);
  out.token = reshape(permute(fused, {0, 2, 3, 1}), {b, Index(config.patch_count), d});
  return out;
}

template <typename S>
Tensor<S> build_scale_token(const ParameterStore<S>& store, const DuoFormerConfig& config,
                            const FeaturePyramid<S>& pyramid, NormMode mode) {
  return build_scale_token_traced(store, config, pyramid, mode).token;
}

template <typename S>
MultiScaleTokens<S> attach_scale_token(const MultiScaleTokens<S>& tokens, const Tensor<S>& token) {
  if (tokens.has_scale_token) throw ContractError("scale token already attached");
  const Index b = tokens.tokens.dim(0), n = tokens.tokens.dim(2), d = tokens.tokens.dim(3);
  Tensor<S> t = token;
  if (t.rank() == 2) t = add(Tensor<S>({b, n, d}, S(0)), t);
  if (t.shape() != Shape{b, n, d}) {
    throw DimensionError("scale token " + to_string(token.shape()) + " does not match tokens " +
                         to_string(tokens.tokens.shape()));
  }
  MultiScaleTokens<S> out;
  out.layout = tokens.layout;
  out.has_scale_token = true;
  out.tokens = concat(std::vector<Tensor<S>>{reshape(t, {b, 1, n, d}), tokens.tokens}, 1);
  return out;
}

#define DUO_INSTANTIATE(S)                                                                     \
  template void init_scale_token<S>(ParameterStore<S>&, const DuoFormerConfig&, Rng&);         \
  template ScaleTokenTrace<S> build_scale_token_traced<S>(                                     \
      const ParameterStore<S>&, const DuoFormerConfig&, const FeaturePyramid<S>&, NormMode);   \
  template Tensor<S> build_scale_token<S>(const ParameterStore<S>&, const DuoFormerConfig&,    \
                                          const FeaturePyramid<S>&, NormMode);                 \
  template MultiScaleTokens<S> attach_scale_token<S>(const MultiScaleTokens<S>&, const Tensor<S>&);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
