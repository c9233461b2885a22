#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "robarch/tensor.hpp"

namespace robarch {

struct Dataset {
  // (N, C, H, W) in [0, 1].
  Tensor images;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
};

enum class DatasetSource { image_folder, synthetic_shapes };

const char* dataset_source_name(DatasetSource s);
DatasetSource dataset_source_from_name(const std::string& name);

struct SplitFractions {
  double train = 0.7;
  double holdout = 0.1;
  double test = 0.2;
};

struct DatasetSpec {
  DatasetSource source = DatasetSource::synthetic_shapes;
  std::filesystem::path path;  // image_folder only
  SplitFractions splits;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 3;
  // synthetic_shapes only.
  std::size_t samples_per_class = 600;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset train;
  Dataset holdout;
  Dataset test;
};

// Throws ConfigError naming the offending field.
void validate(const DatasetSpec& spec);

extern const std::vector<std::string> kShapeNames;

// Class k draws shape kShapeNames[k] with random position, scale and colours.
Dataset generate_synthetic_shapes(const DatasetSpec& spec);
// Directory-per-class layout (sorted), or the order given by an optional
// labels.txt (one class directory name per line). Images are resized so the
// shorter side matches, then center-cropped.
Dataset load_image_folder(const DatasetSpec& spec);
Dataset load_dataset(const DatasetSpec& spec);

// Stratified, seed-stable, disjoint.
Splits split_dataset(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed);
Splits load_splits(const DatasetSpec& spec);

// First n indices of a seeded shuffle of [0, size).
std::vector<std::size_t> evaluation_indices(std::size_t size, std::size_t n, std::uint64_t seed);

std::vector<std::size_t> class_histogram(const Dataset& data);

// Batch augmentation: random horizontal flip and random crop from a
// zero-padded copy.
Tensor augment_batch(const Tensor& batch, std::size_t pad, std::uint64_t seed);

}  // namespace robarch
