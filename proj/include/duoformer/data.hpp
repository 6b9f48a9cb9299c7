#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duoformer/tensor.hpp"

namespace duo {

enum class Split : std::int64_t { train = 0, val = 1, test = 2 };

// Image classification set held in memory. images is [n, size, size, 3] in
// [0, 1]; split assigns every sample to train, val or test.
struct Dataset {
  Tensor<float> images;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> split;
  int num_classes = 0;
  std::vector<std::string> class_names;

  Index size() const { return static_cast<Index>(labels.size()); }
  int image_size() const { return static_cast<int>(images.dim(1)); }
  std::vector<Index> indices(Split which) const;
  // Throws FormatError on inconsistent extents, labels or split codes.
  void validate() const;
};

struct SyntheticOptions {
  int classes = 4;
  int samples = 256;
  int size = 64;
  std::uint64_t seed = 0;
  double val_fraction = 1.0 / 6.0;
  double test_fraction = 1.0 / 6.0;
};

// Class k = shape·2 + texture. Shapes (disk, square, diamond) share one
// footprint area; textures are vertical stripes of period 2 or 4 px inside the
// footprint. Gaussian noise σ = 0.1 is added and the result clamped to [0, 1].
// Sample i has label i mod classes. Throws ConfigError for size < 32 or a
// class count that is not 2, 4 or 6.
Dataset gen_synthetic(const SyntheticOptions& options);

// Per class, shuffles member indices and assigns the first round(n·test) to
// test, the next round(n·val) to val and the rest to train.
std::vector<std::int64_t> stratified_split(const std::vector<std::int64_t>& labels, int num_classes,
                                           double val_fraction, double test_fraction,
                                           std::uint64_t seed);

// Writes images.dft, labels.dft, split.dft and manifest.txt.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const std::string& manifest_extra = "");
// Reads a dataset directory. Without split.dft a stratified 4:1:1 split with
// seed 0 is derived from the labels.
Dataset load_dataset(const std::filesystem::path& dir);

// Mean over non-overlapping factor×factor blocks of each image, [n, s/f, s/f, 3].
Tensor<float> downsample_images(const Tensor<float>& images, int factor);

}  // namespace duo
