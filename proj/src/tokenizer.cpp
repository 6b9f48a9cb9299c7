#include "duoformer/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "duoformer/errors.hpp"

namespace duo {

Index StageIndexMap::slot_of(Index row, Index col) const {
  const Index p = (row / side) * grid + col / side;
  const Index o = (row % side) * side + col % side;
  return p * tokens_per_patch() + o;
}

std::vector<StageIndexMap> patch_index_map(int input_size, int patch_count,
                                           const std::vector<int>& stages) {
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(patch_count))));
  if (patch_count <= 0 || grid * grid != patch_count) {
    throw ConfigError("patch_count " + std::to_string(patch_count) + " is not a perfect square");
  }
  std::vector<StageIndexMap> maps;
  for (int stage : stages) {
    const int denom = 4 * (1 << stage) * grid;
    if (stage < 0 || stage > 3 || input_size <= 0 || input_size % denom != 0) {
      throw ConfigError("stage " + std::to_string(stage) + ": P' = " + std::to_string(input_size) +
                        "/(4*2^" + std::to_string(stage) + "*" + std::to_string(grid) +
                        ") is not a positive integer");
    }
    StageIndexMap m;
    m.stage = stage;
    m.extent = input_size / (4 << stage);
    m.side = m.extent / grid;
    m.grid = grid;
    m.position.assign(static_cast<std::size_t>(m.extent) * m.extent, 0);
    for (Index r = 0; r < m.extent; ++r) {
      for (Index c = 0; c < m.extent; ++c) m.position[m.slot_of(r, c)] = r * m.extent + c;
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

template <typename S>
int MultiScaleTokens<S>::scale_count() const {
  int n = 0;
  for (const auto& e : layout) n += e.count;
  return n;
}

template <typename S>
int MultiScaleTokens<S>::offset_of(int stage) const {
  int offset = has_scale_token ? 1 : 0;
  for (const auto& e : layout) {
    if (e.stage == stage) return offset;
    offset += e.count;
  }
  throw ContractError("token layout has no stage " + std::to_string(stage));
}

template <typename S>
void init_projection(ParameterStore<S>& store, const std::vector<int>& stages,
                     const std::vector<int>& channels, int embed_dim, Rng& rng) {
  for (int i : stages) {
    const std::string p = "proj.stage" + std::to_string(i);
    store.add_parameter(p + ".w", truncated_normal<S>({channels.at(i), embed_dim}, 0.02, rng));
    store.add_parameter(p + ".b", Tensor<S>({embed_dim}, S(0)));
  }
}

template <typename S>
FeaturePyramid<S> project(const FeaturePyramid<S>& pyramid, const ParameterStore<S>& store,
                          const std::vector<int>& stages) {
  FeaturePyramid<S> out;
  out.input_size = pyramid.input_size;
  for (int i : stages) {
    const std::string p = "proj.stage" + std::to_string(i);
    if (!store.contains(p + ".w")) {
      throw ConfigError("no projection weights for included stage " + std::to_string(i));
    }
    out.stages.emplace_back(i, linear(pyramid.at(i), store.get(p + ".w"), store.find(p + ".b")));
  }
  return out;
}

template <typename S>
MultiScaleTokens<S> tokenize(const FeaturePyramid<S>& projected, int patch_count) {
  std::vector<int> stages;
  for (const auto& [i, t] : projected.stages) stages.push_back(i);
  const auto maps = patch_index_map(projected.input_size, patch_count, stages);

  MultiScaleTokens<S> out;
  std::vector<Tensor<S>> parts;
  for (auto m = maps.rbegin(); m != maps.rend(); ++m) {
    const auto& x = projected.at(m->stage);
    const Index b = x.dim(0), d = x.dim(3);
    auto flat = reshape(x, {b, Index(m->extent) * m->extent, d});
    auto gathered = index_select(flat, 1, m->position);
    auto blocks = reshape(gathered, {b, Index(patch_count), Index(m->tokens_per_patch()), d});
    parts.push_back(permute(blocks, {0, 2, 1, 3}));
    out.layout.push_back({m->stage, m->side, m->tokens_per_patch()});
  }
  out.tokens = parts.size() == 1 ? parts.front() : concat(parts, 1);
  return out;
}

template <typename S>
FeaturePyramid<S> untokenize(const MultiScaleTokens<S>& tokens, int input_size, int patch_count) {
  std::vector<int> stages;
  for (const auto& e : tokens.layout) stages.push_back(e.stage);
  std::sort(stages.begin(), stages.end());
  const auto maps = patch_index_map(input_size, patch_count, stages);

  FeaturePyramid<S> out;
  out.input_size = input_size;
  const Index b = tokens.tokens.dim(0), d = tokens.tokens.dim(3);
  for (const auto& m : maps) {
    auto entries = slice(tokens.tokens, 1, tokens.offset_of(m.stage), m.tokens_per_patch());
    auto flat = reshape(permute(entries, {0, 2, 1, 3}), {b, Index(m.position.size()), d});
    std::vector<Index> inverse(m.position.size());
    for (std::size_t slot = 0; slot < m.position.size(); ++slot) {
      inverse[m.position[slot]] = static_cast<Index>(slot);
    }
    out.stages.emplace_back(
        m.stage, reshape(index_select(flat, 1, inverse), {b, Index(m.extent), Index(m.extent), d}));
  }
  return out;
}

std::string describe_layout(const std::vector<ScaleEntry>& layout, bool has_scale_token) {
  std::ostringstream out;
  int offset = 0;
  if (has_scale_token) out << "scale_token offset=0 count=1\n";
  offset = has_scale_token ? 1 : 0;
  for (const auto& e : layout) {
    out << "stage=" << e.stage << " side=" << e.side << " count=" << e.count
        << " offset=" << offset << "\n";
    offset += e.count;
  }
  return out.str();
}

#define DUO_INSTANTIATE(S)                                                                    \
  template struct MultiScaleTokens<S>;                                                        \
  template void init_projection<S>(ParameterStore<S>&, const std::vector<int>&,               \
                                   const std::vector<int>&, int, Rng&);                       \
  template FeaturePyramid<S> project<S>(const FeaturePyramid<S>&, const ParameterStore<S>&,   \
                                        const std::vector<int>&);                             \
  template MultiScaleTokens<S> tokenize<S>(const FeaturePyramid<S>&, int);                    \
  template FeaturePyramid<S> untokenize<S>(const MultiScaleTokens<S>&, int, int);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
