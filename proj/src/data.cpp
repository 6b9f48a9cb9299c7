#include "duoformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "duoformer/errors.hpp"
#include "duoformer/random.hpp"
#include "duoformer/serialize.hpp"

namespace duo {

namespace {

const char* kShapeNames[] = {"disk", "square", "diamond"};
const int kPeriods[] = {2, 4};

bool inside(int shape, double dx, double dy, double radius) {
  switch (shape) {
    case 0: return dx * dx + dy * dy <= radius * radius;
    case 1: {
      const double half = 0.5 * radius * std::sqrt(std::numbers::pi);
      return std::abs(dx) <= half && std::abs(dy) <= half;
    }
    default: {
      const double c = radius * std::sqrt(std::numbers::pi / 2.0);
      return std::abs(dx) + std::abs(dy) <= c;
    }
  }
}

}  // namespace

std::vector<Index> Dataset::indices(Split which) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == static_cast<std::int64_t>(which)) out.push_back(static_cast<Index>(i));
  }
  return out;
}

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4 || images.dim(3) != 3 ||
      images.dim(1) != images.dim(2)) {
    throw FormatError("images must be [n, size, size, 3]");
  }
  if (images.dim(0) != size()) {
    throw FormatError("images hold " + std::to_string(images.dim(0)) + " samples but labels hold " +
                      std::to_string(size()));
  }
  if (split.size() != labels.size()) throw FormatError("split and labels differ in length");
  if (num_classes < 2) throw FormatError("dataset needs at least two classes");
  for (auto l : labels) {
    if (l < 0 || l >= num_classes) throw FormatError("label " + std::to_string(l) + " out of range");
  }
  for (auto s : split) {
    if (s < 0 || s > 2) throw FormatError("split code " + std::to_string(s) + " not in {0,1,2}");
  }
}

std::vector<std::int64_t> stratified_split(const std::vector<std::int64_t>& labels, int num_classes,
                                           double val_fraction, double test_fraction,
                                           std::uint64_t seed) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1) {
    throw ConfigError("split fractions must be nonnegative and sum below 1");
  }
  std::vector<std::int64_t> split(labels.size(), static_cast<std::int64_t>(Split::train));
  Rng rng(seed);
  for (int k = 0; k < num_classes; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == k) members.push_back(i);
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng.below(i)]);
    }
    const auto n = static_cast<double>(members.size());
    const auto n_test = static_cast<std::size_t>(std::lround(n * test_fraction));
    const auto n_val = static_cast<std::size_t>(std::lround(n * val_fraction));
    for (std::size_t j = 0; j < members.size(); ++j) {
      if (j < n_test) split[members[j]] = static_cast<std::int64_t>(Split::test);
      else if (j < n_test + n_val) split[members[j]] = static_cast<std::int64_t>(Split::val);
    }
  }
  return split;
}

Dataset gen_synthetic(const SyntheticOptions& options) {
  if (options.size < 32) {
    throw ConfigError("image size " + std::to_string(options.size) + " is below the minimum of 32");
  }
  if (options.classes != 2 && options.classes != 4 && options.classes != 6) {
    throw ConfigError("classes must be 2, 4 or 6 (1-3 shapes x 2 textures), got " +
                      std::to_string(options.classes));
  }
  if (options.samples < options.classes) throw ConfigError("need at least one sample per class");

  const int n = options.samples, s = options.size;
  Dataset ds;
  ds.num_classes = options.classes;
  for (int k = 0; k < options.classes; ++k) {
    ds.class_names.push_back(std::string(kShapeNames[k / 2]) + "_period" +
                             std::to_string(kPeriods[k % 2]));
  }
  Buffer<float> pixels(static_cast<Index>(n) * s * s * 3);
  Rng root(options.seed);
  const double radius = 0.28 * s;
  const double jitter = s / 32.0;
  for (int i = 0; i < n; ++i) {
    Rng rng = root.split();
    const int label = i % options.classes;
    const int shape = label / 2;
    const int period = kPeriods[label % 2];
    const double cx = 0.5 * (s - 1) + rng.uniform(-jitter, jitter);
    const double cy = 0.5 * (s - 1) + rng.uniform(-jitter, jitter);
    const int phase = static_cast<int>(rng.below(period));
    float* img = pixels.data() + static_cast<Index>(i) * s * s * 3;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double v = 0.2;
        if (inside(shape, x - cx, y - cy, radius)) {
          v = ((x + phase) % period) < period / 2 ? 0.9 : 0.5;
        }
        for (int c = 0; c < 3; ++c) {
          const double noisy = std::clamp(v + 0.1 * rng.normal(), 0.0, 1.0);
          img[(y * s + x) * 3 + c] = static_cast<float>(noisy);
        }
      }
    }
    ds.labels.push_back(label);
  }
  ds.images = Tensor<float>({n, s, s, 3}, std::move(pixels));
  ds.split = stratified_split(ds.labels, ds.num_classes, options.val_fraction,
                              options.test_fraction, options.seed);
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const std::string& manifest_extra) {
  dataset.validate();
  std::filesystem::create_directories(dir);
  const std::uint64_t n = dataset.labels.size();
  io::save_record(dir / "images.dft", io::to_record(dataset.images));
  io::save_record(dir / "labels.dft", io::from_i64({n}, dataset.labels));
  io::save_record(dir / "split.dft", io::from_i64({n}, dataset.split));
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write " + (dir / "manifest.txt").string());
  manifest << "classes=" << dataset.num_classes << "\n";
  manifest << "samples=" << n << "\n";
  manifest << "size=" << dataset.image_size() << "\n";
  for (int k = 0; k < dataset.num_classes; ++k) {
    const std::string name =
        k < static_cast<int>(dataset.class_names.size()) ? dataset.class_names[k] : "class" + std::to_string(k);
    manifest << "class" << k << "=" << name << "\n";
  }
  manifest << manifest_extra;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("no dataset directory " + dir.string());
  Dataset ds;
  ds.images = io::to_tensor<float>(io::load_record(dir / "images.dft"));
  try {
    ds.labels = io::to_i64(io::load_record(dir / "labels.dft"));
  } catch (const FormatError& e) {
    throw FormatError((dir / "labels.dft").string() + ": " + e.what());
  }
  std::int64_t max_label = 0;
  for (auto l : ds.labels) max_label = std::max(max_label, l);
  ds.num_classes = static_cast<int>(max_label + 1);

  std::ifstream manifest(dir / "manifest.txt");
  std::string line;
  while (manifest && std::getline(manifest, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "classes") {
      ds.num_classes = std::stoi(value);
    } else if (key.rfind("class", 0) == 0 && key.size() > 5 &&
               std::all_of(key.begin() + 5, key.end(), ::isdigit)) {
      const auto k = static_cast<std::size_t>(std::stoul(key.substr(5)));
      if (ds.class_names.size() <= k) ds.class_names.resize(k + 1);
      ds.class_names[k] = value;
    }
  }
  if (std::filesystem::exists(dir / "split.dft")) {
    ds.split = io::to_i64(io::load_record(dir / "split.dft"));
  } else {
    ds.split = stratified_split(ds.labels, ds.num_classes, 1.0 / 6.0, 1.0 / 6.0, 0);
  }
  try {
    ds.validate();
  } catch (const FormatError& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  return ds;
}

Tensor<float> downsample_images(const Tensor<float>& images, int factor) {
  const Index n = images.dim(0), s = images.dim(1), c = images.dim(3);
  if (factor <= 0 || s % factor != 0) throw DimensionError("image size not divisible by factor");
  const Index t = s / factor;
  Buffer<float> out = Buffer<float>::Zero(n * t * t * c);
  const auto& in = images.data();
  const float norm = 1.0f / static_cast<float>(factor * factor);
  for (Index i = 0; i < n; ++i) {
    for (Index y = 0; y < s; ++y) {
      for (Index x = 0; x < s; ++x) {
        for (Index k = 0; k < c; ++k) {
          out[((i * t + y / factor) * t + x / factor) * c + k] += in[((i * s + y) * s + x) * c + k] * norm;
        }
      }
    }
  }
  return Tensor<float>({n, t, t, c}, std::move(out));
}

}  // namespace duo
