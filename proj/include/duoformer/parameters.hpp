#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "duoformer/ops.hpp"
#include "duoformer/random.hpp"
#include "duoformer/tensor.hpp"

namespace duo {

// Named, ordered collection of trainable parameters and non-trainable buffers
// (BatchNorm running statistics). Names are dotted paths such as
// `encoder.layer0.scale.attn.q.w`; insertion order is the checkpoint order.
template <typename S>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> tensor;
    bool trainable = true;
  };

  Tensor<S> add_parameter(const std::string& name, Tensor<S> value);
  Tensor<S> add_buffer(const std::string& name, Tensor<S> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  // Throws ContractError for unknown names.
  const Tensor<S>& get(const std::string& name) const;
  // Undefined tensor when absent (optional biases).
  Tensor<S> find(const std::string& name) const;

  // Running statistics registered under `prefix.running_mean/var`.
  RunningStats<S> stats(const std::string& prefix) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor<S>> trainable() const;
  std::vector<std::string> trainable_names() const;
  std::int64_t trainable_count() const;

  // Toggles requires_grad for every parameter whose name starts with `prefix`.
  void set_frozen(const std::string& prefix, bool frozen);

  void zero_grad();

  // Deep copy of every value, used for best-checkpoint snapshots.
  std::vector<Buffer<S>> snapshot() const;
  void restore(const std::vector<Buffer<S>>& values);

 private:
  Tensor<S> insert(const std::string& name, Tensor<S> value, bool trainable);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Initializers. Shapes are given explicitly; fan_in is the product of all but
// the leading extent for conv weights.
template <typename S>
Tensor<S> kaiming_uniform(const Shape& shape, Index fan_in, Rng& rng);
template <typename S>
Tensor<S> truncated_normal(const Shape& shape, double sigma, Rng& rng);

// Registers a conv weight and BatchNorm (gamma, beta, running stats) pair.
template <typename S>
void add_conv_bn(ParameterStore<S>& store, const std::string& conv, const std::string& bn,
                 Index out_channels, Index in_channels, Index kernel, Rng& rng);

// Applies conv2d (no bias), batch_norm and relu with parameters from `store`.
template <typename S>
Tensor<S> conv_bn_relu(const ParameterStore<S>& store, const Tensor<S>& x, const std::string& conv,
                       const std::string& bn, int stride, int padding, NormMode mode);

// Reporting group of a parameter name: backbone, proj, scale_token, encoder.pos,
// encoder.scale, encoder.patch, encoder.block or head.
std::string parameter_group(const std::string& name);

}  // namespace duo
