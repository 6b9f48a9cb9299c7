#include "duoformer/backbone.hpp"

#include "duoformer/errors.hpp"
#include "duoformer/serialize.hpp"

namespace duo {

template <typename S>
bool FeaturePyramid<S>::has(int stage) const {
  for (const auto& [i, t] : stages) {
    if (i == stage) return true;
  }
  return false;
}

template <typename S>
const Tensor<S>& FeaturePyramid<S>::at(int stage) const {
  for (const auto& [i, t] : stages) {
    if (i == stage) return t;
  }
  throw ContractError("feature pyramid has no stage " + std::to_string(stage));
}

template <typename S>
Index FeaturePyramid<S>::batch() const {
  if (stages.empty()) throw ContractError("empty feature pyramid");
  return stages.front().second.dim(0);
}

template <typename S>
void FeaturePyramid<S>::validate() const {
  if (stages.empty()) throw FormatError("feature pyramid has no stages");
  if (input_size <= 0) throw FormatError("input_size must be positive");
  int previous = -1;
  for (const auto& [i, t] : stages) {
    const std::string name = "stage" + std::to_string(i);
    if (i < 0 || i > 3) throw FormatError(name + ": stage index outside 0..3");
    if (i <= previous) throw FormatError(name + ": stage indices must be strictly increasing");
    previous = i;
    if (input_size % (4 << i) != 0) {
      throw FormatError(name + ": input_size " + std::to_string(input_size) +
                        " is not divisible by " + std::to_string(4 << i));
    }
    const Index p = input_size / (4 << i);
    if (t.rank() != 4 || t.dim(1) != p || t.dim(2) != p) {
      throw FormatError(name + ": expected [B, " + std::to_string(p) + ", " + std::to_string(p) +
                        ", C], got " + to_string(t.shape()));
    }
    if (t.dim(0) != stages.front().second.dim(0)) {
      throw FormatError(name + ": batch extent " + std::to_string(t.dim(0)) +
                        " differs from " + std::to_string(stages.front().second.dim(0)));
    }
  }
}

int stage_extent(int input_size, int stage) {
  if (stage < 0 || stage > 3) throw ConfigError("stage index outside 0..3");
  if (input_size <= 0 || input_size % (4 << stage) != 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " gives non-integer extent at stage " +
                      std::to_string(stage));
  }
  return input_size / (4 << stage);
}

template <typename S>
void init_toy_backbone(ParameterStore<S>& store, const std::vector<int>& channels, int max_stage,
                       Rng& rng) {
  if (channels.size() != 4) throw ConfigError("toy backbone needs four channel widths");
  Index in = 3;
  for (int i = 0; i <= max_stage; ++i) {
    const std::string p = "backbone.stage" + std::to_string(i);
    add_conv_bn(store, p + ".conv1", p + ".bn1", channels[i], in, 3, rng);
    add_conv_bn(store, p + ".conv2", p + ".bn2", channels[i], channels[i], 3, rng);
    in = channels[i];
  }
}

template <typename S>
FeaturePyramid<S> toy_backbone_forward(const ParameterStore<S>& store, const Tensor<S>& images,
                                       int max_stage, NormMode mode) {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw DimensionError("images must be [B, H, W, 3], got " + to_string(images.shape()));
  }
  const Index h = images.dim(1);
  if (h != images.dim(2)) throw ConfigError("images must be square, got " + to_string(images.shape()));
  if (h % 32 != 0) {
    throw ConfigError("input size " + std::to_string(h) + " is not divisible by 32");
  }
  FeaturePyramid<S> out;
  out.input_size = static_cast<int>(h);
  auto x = permute(images, {0, 3, 1, 2});
  for (int i = 0; i <= max_stage; ++i) {
    const std::string p = "backbone.stage" + std::to_string(i);
    x = conv_bn_relu(store, x, p + ".conv1", p + ".bn1", 2, 1, mode);
    x = conv_bn_relu(store, x, p + ".conv2", p + ".bn2", i == 0 ? 2 : 1, 1, mode);
    out.stages.emplace_back(i, permute(x, {0, 2, 3, 1}));
  }
  return out;
}

template <typename S>
FeaturePyramid<S> select_stages(const FeaturePyramid<S>& pyramid, const std::vector<int>& stages) {
  FeaturePyramid<S> out;
  out.input_size = pyramid.input_size;
  for (int s : stages) out.stages.emplace_back(s, pyramid.at(s));
  return out;
}

template <typename S>
FeaturePyramid<S> select_batch(const FeaturePyramid<S>& pyramid, const std::vector<Index>& rows) {
  FeaturePyramid<S> out;
  out.input_size = pyramid.input_size;
  for (const auto& [i, t] : pyramid.stages) out.stages.emplace_back(i, index_select(t, 0, rows));
  return out;
}

template <typename S>
void save_pyramid(const std::filesystem::path& path, const FeaturePyramid<S>& pyramid) {
  pyramid.validate();
  io::Container c;
  for (const auto& [i, t] : pyramid.stages) c.put("stage" + std::to_string(i), io::to_record(t));
  c.put("input_size", io::from_i64({}, {pyramid.input_size}));
  io::save_container(path, c);
}

template <typename S>
FeaturePyramid<S> load_pyramid(const std::filesystem::path& path) {
  const auto c = io::load_container(path);
  FeaturePyramid<S> out;
  const auto* size = c.find("input_size");
  if (!size) throw FormatError(path.string() + ": missing entry 'input_size'");
  const auto value = io::to_i64(*size);
  if (value.size() != 1) throw FormatError(path.string() + ": entry 'input_size' must be a scalar");
  out.input_size = static_cast<int>(value[0]);
  for (int i = 0; i < 4; ++i) {
    const std::string name = "stage" + std::to_string(i);
    if (const auto* r = c.find(name)) {
      try {
        out.stages.emplace_back(i, io::to_tensor<S>(*r));
      } catch (const Error& e) {
        throw FormatError(path.string() + ": entry '" + name + "': " + e.what());
      }
    }
  }
  for (const auto& [name, r] : c.entries) {
    const bool known = name == "input_size" || name == "stage0" || name == "stage1" || name == "stage2" ||
                       name == "stage3";
    if (!known) {
      throw FormatError(path.string() + ": unexpected entry '" + name + "'");
    }
  }
  try {
    out.validate();
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return out;
}

#define DUO_INSTANTIATE(S)                                                                      \
  template struct FeaturePyramid<S>;                                                            \
  template void init_toy_backbone<S>(ParameterStore<S>&, const std::vector<int>&, int, Rng&);  \
  template FeaturePyramid<S> toy_backbone_forward<S>(const ParameterStore<S>&, const Tensor<S>&, \
                                                     int, NormMode);                            \
  template FeaturePyramid<S> select_stages<S>(const FeaturePyramid<S>&, const std::vector<int>&); \
  template FeaturePyramid<S> select_batch<S>(const FeaturePyramid<S>&, const std::vector<Index>&); \
  template void save_pyramid<S>(const std::filesystem::path&, const FeaturePyramid<S>&);        \
  template FeaturePyramid<S> load_pyramid<S>(const std::filesystem::path&);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
