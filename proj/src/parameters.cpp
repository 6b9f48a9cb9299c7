#include "duoformer/parameters.hpp"

#include <cmath>

#include "duoformer/errors.hpp"

namespace duo {

template <typename S>
Tensor<S> ParameterStore<S>::insert(const std::string& name, Tensor<S> value, bool trainable) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  value.set_requires_grad(trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(value), trainable});
  return entries_.back().tensor;
}

template <typename S>
Tensor<S> ParameterStore<S>::add_parameter(const std::string& name, Tensor<S> value) {
  return insert(name, std::move(value), true);
}

template <typename S>
Tensor<S> ParameterStore<S>::add_buffer(const std::string& name, Tensor<S> value) {
  return insert(name, std::move(value), false);
}

template <typename S>
const Tensor<S>& ParameterStore<S>::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return entries_[it->second].tensor;
}

template <typename S>
Tensor<S> ParameterStore<S>::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? Tensor<S>() : entries_[it->second].tensor;
}

template <typename S>
RunningStats<S> ParameterStore<S>::stats(const std::string& prefix) const {
  return {get(prefix + ".running_mean"), get(prefix + ".running_var")};
}

template <typename S>
std::vector<Tensor<S>> ParameterStore<S>::trainable() const {
  std::vector<Tensor<S>> out;
  for (const auto& e : entries_) {
    if (e.trainable && e.tensor.requires_grad()) out.push_back(e.tensor);
  }
  return out;
}

template <typename S>
std::vector<std::string> ParameterStore<S>::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.trainable && e.tensor.requires_grad()) out.push_back(e.name);
  }
  return out;
}

template <typename S>
std::int64_t ParameterStore<S>::trainable_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

template <typename S>
void ParameterStore<S>::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& e : entries_) {
    if (e.trainable && e.name.rfind(prefix, 0) == 0) e.tensor.set_requires_grad(!frozen);
  }
}

template <typename S>
void ParameterStore<S>::zero_grad() {
  for (auto& e : entries_) {
    if (e.trainable) e.tensor.zero_grad();
  }
}

template <typename S>
std::vector<Buffer<S>> ParameterStore<S>::snapshot() const {
  std::vector<Buffer<S>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor.data());
  return out;
}

template <typename S>
void ParameterStore<S>::restore(const std::vector<Buffer<S>>& values) {
  if (values.size() != entries_.size()) throw ContractError("snapshot size mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto t = entries_[i].tensor;
    if (values[i].size() != t.numel()) throw ContractError("snapshot extent mismatch");
    t.mutable_data() = values[i];
  }
}

template <typename S>
Tensor<S> kaiming_uniform(const Shape& shape, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Buffer<S> data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data[i] = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>(shape, std::move(data));
}

template <typename S>
Tensor<S> truncated_normal(const Shape& shape, double sigma, Rng& rng) {
  Buffer<S> data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data[i] = static_cast<S>(rng.truncated_normal(sigma));
  return Tensor<S>(shape, std::move(data));
}

template <typename S>
void add_conv_bn(ParameterStore<S>& store, const std::string& conv, const std::string& bn,
                 Index out_channels, Index in_channels, Index kernel, Rng& rng) {
  store.add_parameter(conv + ".w", kaiming_uniform<S>({out_channels, in_channels, kernel, kernel},
                                                      in_channels * kernel * kernel, rng));
  store.add_parameter(bn + ".gamma", Tensor<S>({out_channels}, S(1)));
  store.add_parameter(bn + ".beta", Tensor<S>({out_channels}, S(0)));
  store.add_buffer(bn + ".running_mean", Tensor<S>({out_channels}, S(0)));
  store.add_buffer(bn + ".running_var", Tensor<S>({out_channels}, S(1)));
}

template <typename S>
Tensor<S> conv_bn_relu(const ParameterStore<S>& store, const Tensor<S>& x, const std::string& conv,
                       const std::string& bn, int stride, int padding, NormMode mode) {
  auto stats = store.stats(bn);
  const auto y = conv2d(x, store.get(conv + ".w"), Tensor<S>(), stride, padding);
  return relu(batch_norm(y, store.get(bn + ".gamma"), store.get(bn + ".beta"), stats, mode));
}

std::string parameter_group(const std::string& name) {
  const auto first = name.substr(0, name.find('.'));
  if (first != "encoder") return first;
  if (name.rfind("encoder.pos", 0) == 0) return "encoder.pos";
  if (name.rfind("encoder.block", 0) == 0) return "encoder.block";
  if (name.find(".scale.") != std::string::npos) return "encoder.scale";
  if (name.find(".patch.") != std::string::npos) return "encoder.patch";
  return "encoder";
}

#define DUO_INSTANTIATE(S)                                                                     \
  template class ParameterStore<S>;                                                            \
  template Tensor<S> kaiming_uniform<S>(const Shape&, Index, Rng&);                            \
  template Tensor<S> truncated_normal<S>(const Shape&, double, Rng&);                          \
  template void add_conv_bn<S>(ParameterStore<S>&, const std::string&, const std::string&,     \
                               Index, Index, Index, Rng&);                                     \
  template Tensor<S> conv_bn_relu<S>(const ParameterStore<S>&, const Tensor<S>&,               \
                                     const std::string&, const std::string&, int, int, NormMode);

DUO_INSTANTIATE(float)
DUO_INSTANTIATE(double)

}  // namespace duo
