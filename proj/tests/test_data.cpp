#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "robarch/image_io.hpp"
#include "robarch/losses.hpp"
#include "robarch/train.hpp"
#include "test_util.hpp"

using namespace robarch;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("synthetic shapes are seed-stable, balanced and in range") {
    DatasetSpec s;
    s.samples_per_class = 50;
    s.num_classes = 5;
    const Dataset a = generate_synthetic_shapes(s);
    const Dataset b = generate_synthetic_shapes(s);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    s.seed = 1;
    CHECK_FALSE(generate_synthetic_shapes(s).images == a.images);
    const auto hist = class_histogram(a);
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    CHECK(*hi - *lo <= 1);
    for (double v : a.images.storage()) CHECK((v >= 0.0 && v <= 1.0));
    for (int y : a.labels) CHECK((y >= 0 && y < 5));
    CHECK(a.class_names.size() == 5);
    s.num_classes = 1;
    CHECK_THROWS_AS(generate_synthetic_shapes(s), ConfigError);
  }

  TEST_CASE("splits are stratified, disjoint and seed-stable") {
    DatasetSpec s;
    s.samples_per_class = 100;
    s.height = s.width = 8;
    const Dataset d = generate_synthetic_shapes(s);
    const Splits a = split_dataset(d, s.splits, 3);
    const Splits b = split_dataset(d, s.splits, 3);
    CHECK(a.test.images == b.test.images);
    CHECK(a.train.size() + a.holdout.size() + a.test.size() == d.size());
    for (const Dataset* part : {&a.train, &a.holdout, &a.test}) {
      const auto h = class_histogram(*part);
      CHECK(*std::max_element(h.begin(), h.end()) - *std::min_element(h.begin(), h.end()) <= 1);
    }
    // Disjoint: every image row appears exactly once across the splits.
    std::set<std::vector<double>> rows;
    for (const Dataset* part : {&a.train, &a.holdout, &a.test}) {
      const std::size_t rs = part->images.row_size();
      for (std::size_t i = 0; i < part->size(); ++i) {
        rows.insert(std::vector<double>(part->images.data() + i * rs, part->images.data() + (i + 1) * rs));
      }
    }
    CHECK(rows.size() == d.size());
    CHECK(a.test.size() == 60);
  }

  TEST_CASE("evaluation indices are nested prefixes of one shuffle") {
    const auto a = evaluation_indices(100, 10, 5);
    const auto b = evaluation_indices(100, 30, 5);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
    CHECK(std::set<std::size_t>(b.begin(), b.end()).size() == 30);
    CHECK(evaluation_indices(5, 50, 1).size() == 5);
  }

  TEST_CASE("augmentation keeps shape and is deterministic") {
    const Tensor x = robarch::testing::uniform_tensor({4, 3, 8, 8}, 1);
    const Tensor a = augment_batch(x, 2, 7);
    CHECK(a.shape() == x.shape());
    CHECK(augment_batch(x, 2, 7) == a);
    CHECK(augment_batch(x, 0, 7).shape() == x.shape());
  }

  TEST_CASE("a two-layer network fits the default synthetic task within five epochs") {
    DatasetSpec s;  // 32x32, 3 classes, 600 per class
    const Splits data = load_splits(s);
    ModelConfig mc = mlp_config({3, 32, 32}, 3, 64);
    mc.activation = nn::Activation::gelu;
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 32;
    tc.peak_lr = 0.003;
    tc.schedule = ScheduleKind::cyclic;
    tc.warmup_epochs = 1;
    tc.weight_decay = 0.0;
    tc.augment = false;
    tc.at_inner_steps = 0;
    const TrainResult r = adversarial_train(mc, data, tc, {}, {}, 1);
    const auto wrong = misclassified(predict_logits(r.model, data.test.images), data.test.labels);
    const double acc = 100.0 * static_cast<double>(std::count(wrong.begin(), wrong.end(), false)) /
                       static_cast<double>(wrong.size());
    MESSAGE("test accuracy " << acc);
    CHECK(acc >= 95.0);
  }

  TEST_CASE("PNG round trip and image folder ingestion") {
    const fs::path root = fresh_dir("robarch_folder_test");
    const char* classes[] = {"zebra", "apple"};
    for (int k = 0; k < 2; ++k) {
      fs::create_directories(root / classes[k]);
      for (int i = 0; i < 5; ++i) {
        Tensor img({3, 12, 10}, 0.2 + 0.6 * k);
        img[i] = 1.0;
        write_png(root / classes[k] / ("img" + std::to_string(i) + ".png"), img);
      }
    }
    const Tensor back = read_png(root / "apple" / "img0.png");
    CHECK(back.shape() == Shape{3, 12, 10});
    CHECK(std::abs(back[1] - 0.8) < 1.0 / 255 + 1e-12);
    DatasetSpec s;
    s.source = DatasetSource::image_folder;
    s.path = root;
    s.num_classes = 2;
    s.height = s.width = 8;
    Dataset d = load_dataset(s);
    CHECK(d.size() == 10);
    CHECK(d.class_names == std::vector<std::string>{"apple", "zebra"});
    CHECK(d.images.shape() == Shape{10, 3, 8, 8});
    std::ofstream(root / "labels.txt") << "zebra\napple\n";
    d = load_dataset(s);
    CHECK(d.class_names == std::vector<std::string>{"zebra", "apple"});
    s.channels = 1;
    CHECK(load_dataset(s).images.dim(1) == 1);
    s.num_classes = 3;
    CHECK_THROWS_AS(load_dataset(s), ConfigError);
    s.path = root / "missing";
    CHECK_THROWS_WITH_AS(validate(s), doctest::Contains("dataset.path"), ConfigError);
    fs::remove_all(root);
  }
}
