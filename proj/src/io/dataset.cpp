#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "robarch/data.hpp"
#include "robarch/image_io.hpp"
#include "robarch/random.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

namespace fs = std::filesystem;

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.num_classes = num_classes;
  d.class_names = class_names;
  d.images = images.gather(indices);
  for (std::size_t i : indices) d.labels.push_back(labels.at(i));
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), 0);
  return subset(idx);
}

const char* dataset_source_name(DatasetSource s) {
  return s == DatasetSource::image_folder ? "image_folder" : "synthetic_shapes";
}

DatasetSource dataset_source_from_name(const std::string& name) {
  if (name == "image_folder") return DatasetSource::image_folder;
  if (name == "synthetic_shapes") return DatasetSource::synthetic_shapes;
  throw ConfigError("dataset.source: expected one of image_folder, synthetic_shapes, got '" + name + "'");
}

void validate(const DatasetSpec& s) {
  if (s.num_classes < 2) throw ConfigError("dataset.num_classes: expected an integer >= 2");
  if (s.channels != 1 && s.channels != 3) throw ConfigError("dataset.channels: expected 1 or 3");
  if (s.height == 0 || s.width == 0) throw ConfigError("dataset.image_size: expected positive height and width");
  const auto& f = s.splits;
  for (double v : {f.train, f.holdout, f.test}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("dataset.splits: fractions must lie in [0, 1]");
  }
  if (f.train <= 0.0 || std::abs(f.train + f.holdout + f.test - 1.0) > 1e-9) {
    throw ConfigError("dataset.splits: expected train > 0 and train + holdout + test = 1");
  }
  if (s.source == DatasetSource::synthetic_shapes) {
    if (s.num_classes > kShapeNames.size()) {
      throw ConfigError("dataset.num_classes: synthetic_shapes supports at most " +
                        std::to_string(kShapeNames.size()) + " classes");
    }
    if (s.samples_per_class == 0) throw ConfigError("dataset.samples_per_class: expected a positive integer");
  } else {
    if (s.path.empty()) throw ConfigError("dataset.path: required for source image_folder");
    if (!fs::is_directory(s.path)) throw ConfigError("dataset.path: '" + s.path.string() + "' is not a directory");
  }
}

Dataset load_image_folder(const DatasetSpec& spec) {
  validate(spec);
  std::vector<std::string> classes;
  const fs::path index = spec.path / "labels.txt";
  if (fs::exists(index)) {
    std::ifstream in(index);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) classes.push_back(line);
    }
  } else {
    for (const auto& e : fs::directory_iterator(spec.path)) {
      if (e.is_directory()) classes.push_back(e.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
  }
  if (classes.size() != spec.num_classes) {
    throw ConfigError("dataset.num_classes: expected " + std::to_string(spec.num_classes) + ", folder has " +
                      std::to_string(classes.size()) + " classes");
  }
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const fs::path dir = spec.path / classes[k];
    if (!fs::is_directory(dir)) throw IoError(dir.string() + ": class directory missing");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Tensor img = resize_and_crop(read_png(f), spec.height, spec.width);
      if (spec.channels == 1) {
        Tensor g(Shape{1, spec.height, spec.width});
        const std::size_t plane = spec.height * spec.width;
        for (std::size_t q = 0; q < plane; ++q) g[q] = (img[q] + img[plane + q] + img[2 * plane + q]) / 3.0;
        img = g;
      }
      images.push_back(std::move(img));
      labels.push_back(static_cast<int>(k));
    }
  }
  if (images.empty()) throw IoError(spec.path.string() + ": no PNG images found");
  Dataset d;
  d.images = stack(images);
  d.labels = std::move(labels);
  d.num_classes = spec.num_classes;
  d.class_names = std::move(classes);
  return d;
}

Dataset load_dataset(const DatasetSpec& spec) {
  return spec.source == DatasetSource::synthetic_shapes ? generate_synthetic_shapes(spec) : load_image_folder(spec);
}

Splits split_dataset(const Dataset& data, const SplitFractions& f, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  std::vector<std::size_t> tr, ho, te;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    Rng rng = make_rng(seed, 0x5b11 + k);
    for (std::size_t j = idx.size(); j > 1; --j) std::swap(idx[j - 1], idx[uniform_index(rng, j)]);
    const auto n = static_cast<double>(idx.size());
    const auto n_test = static_cast<std::size_t>(std::lround(f.test * n));
    const auto n_hold = std::min(idx.size() - n_test, static_cast<std::size_t>(std::lround(f.holdout * n)));
    te.insert(te.end(), idx.begin(), idx.begin() + static_cast<long>(n_test));
    ho.insert(ho.end(), idx.begin() + static_cast<long>(n_test), idx.begin() + static_cast<long>(n_test + n_hold));
    tr.insert(tr.end(), idx.begin() + static_cast<long>(n_test + n_hold), idx.end());
  }
  for (auto* v : {&tr, &ho, &te}) std::sort(v->begin(), v->end());
  return {data.subset(tr), data.subset(ho), data.subset(te)};
}

Splits load_splits(const DatasetSpec& spec) { return split_dataset(load_dataset(spec), spec.splits, spec.seed); }

std::vector<std::size_t> evaluation_indices(std::size_t size, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0xe7a1);
  for (std::size_t j = size; j > 1; --j) std::swap(idx[j - 1], idx[uniform_index(rng, j)]);
  idx.resize(std::min(n, size));
  return idx;
}

std::vector<std::size_t> class_histogram(const Dataset& data) {
  std::vector<std::size_t> h(data.num_classes, 0);
  for (int y : data.labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

Tensor augment_batch(const Tensor& batch, std::size_t pad, std::uint64_t seed) {
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  Tensor out(batch.shape());
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, i);
    const bool flip = uniform01(rng) < 0.5;
    const auto dy = static_cast<long long>(uniform_index(rng, 2 * pad + 1)) - static_cast<long long>(pad);
    const auto dx = static_cast<long long>(uniform_index(rng, 2 * pad + 1)) - static_cast<long long>(pad);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = batch.data() + (i * c + ch) * h * w;
      double* dst = out.data() + (i * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const long long sy = static_cast<long long>(y) + dy;
          const long long xx = flip ? static_cast<long long>(w - 1 - x) : static_cast<long long>(x);
          const long long sx = xx + dx;
          const bool in = sy >= 0 && sx >= 0 && sy < static_cast<long long>(h) && sx < static_cast<long long>(w);
          dst[y * w + x] = in ? src[sy * static_cast<long long>(w) + sx] : 0.0;
        }
      }
    }
  }
  return out;
}

}  // namespace robarch
