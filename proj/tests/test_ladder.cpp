#include <doctest.h>

#include <filesystem>

#include "robarch/checkpoint.hpp"
#include "robarch/losses.hpp"
#include "test_util.hpp"

using namespace robarch;
using robarch::testing::toy_config;
using robarch::testing::uniform_tensor;

namespace {

std::vector<std::string> block_layers(const Model& m, const std::string& label) {
  for (const auto& b : describe_blocks(m)) {
    if (b.label == label) return b.layers;
  }
  return {};
}

std::size_t count_blocks(const Model& m, const std::string& label) {
  std::size_t n = 0;
  for (const auto& b : describe_blocks(m)) n += b.label == label;
  return n;
}

}  // namespace

TEST_SUITE("ladder") {
  TEST_CASE("the ladder lists sixteen rows from ResNet-50 to ConvNeXt-T") {
    const auto rows = list_ladder();
    REQUIRE(rows.size() == 16);
    CHECK(rows.front().name == "ResNet-50");
    CHECK(rows.back().name == "ConvNeXt-T");
    CHECK(rows[14].name == "ConvNeXt-T without Layer Scale");
    CHECK(rows[7].config == rows[8].config);
    for (const auto& r : rows) CHECK_NOTHROW(validate(r.config));
  }

  TEST_CASE("cumulative steps reproduce the ConvNeXt-T block structure") {
    const auto rows = list_ladder({3, 32, 32}, 3, 8);
    const Model m = build_model(rows.back().config, 0);
    CHECK(m.config().stage_blocks == std::array<std::size_t, 4>{3, 3, 9, 3});
    CHECK(block_layers(m, "stem") == std::vector<std::string>{"conv4x4/patchify", "norm"});
    CHECK(count_blocks(m, "convnext_block") == 18);
    CHECK(count_blocks(m, "downsample") == 3);
    CHECK(block_layers(m, "convnext_block") ==
          std::vector<std::string>{"dwconv7x7", "norm", "pw_expand", "gelu", "pw_contract", "layer_scale", "add"});
    CHECK(block_layers(m, "downsample") == std::vector<std::string>{"norm", "conv2x2/patchify"});
    CHECK(block_layers(m, "head") == std::vector<std::string>{"avgpool", "norm", "linear"});
    const Model without = build_model(rows[14].config, 0);
    CHECK(block_layers(without, "convnext_block") ==
          std::vector<std::string>{"dwconv7x7", "norm", "pw_expand", "gelu", "pw_contract", "add"});
  }

  TEST_CASE("depth-wise convolution with increased width roughly preserves the parameter count") {
    for (std::size_t width : {8, 16}) {
      const auto rows = list_ladder({3, 32, 32}, 10, width);
      const double base = static_cast<double>(build_model(rows[0].config, 0).parameter_count());
      const double dw = static_cast<double>(build_model(rows[3].config, 0).parameter_count());
      CHECK(std::abs(dw / base - 1.0) <= 0.2);
    }
  }

  TEST_CASE("single steps change only their own fields") {
    const ModelConfig base = resnet_baseline_config({3, 32, 32}, 10, 8);
    ModelConfig g = apply_ladder_step(base, LadderStep::gelu);
    CHECK(g.activation == nn::Activation::gelu);
    g.activation = base.activation;
    CHECK(g == base);
    ModelConfig p = apply_ladder_step(base, LadderStep::patchify_stem);
    CHECK(p.patchify_stem);
    p.patchify_stem = false;
    CHECK(p == base);
    CHECK_THROWS_AS(apply_ladder_step(base, LadderStep::layer_scale), ConfigError);
    CHECK_THROWS_AS(ladder_step_from_name("wider"), ConfigError);
  }

  TEST_CASE("config validation names conflicting fields") {
    ModelConfig c = resnet_baseline_config({3, 32, 32}, 10, 8);
    c.layer_scale = 1e-6;
    try {
      validate(c);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("layer_scale") != std::string::npos);
    }
    ModelConfig v = vit_config({3, 30, 30}, 10, 16, 2, 4, 2);
    CHECK_THROWS_AS(validate(v), ConfigError);
    v = vit_config({3, 32, 32}, 10, 15, 2, 4, 2);
    CHECK_THROWS_AS(validate(v), ConfigError);
  }

  TEST_CASE("model configs round-trip through JSON and checkpoints") {
    for (const char* fam : {"resnet_ladder", "vit", "xcit", "convnext", "mlp", "linear"}) {
      const ModelConfig c = toy_config(fam);
      CHECK(model_config_from_json(to_json(c)) == c);
      const Model m = build_model(c, 3);
      const auto path = std::filesystem::temp_directory_path() / (std::string("robarch_ckpt_") + fam + ".ckpt");
      save_checkpoint(path, m, {{"epoch", 4}});
      const Model r = load_checkpoint(path);
      CHECK(r.config() == c);
      CHECK(read_checkpoint_extra(path).at("epoch") == 4);
      const Tensor x = robarch::testing::toy_batch(fam, 2, 4);
      CHECK(predict_logits(r, x) == predict_logits(m, x));
      CHECK_THROWS_AS(load_checkpoint(path, toy_config("linear", 7)), CheckpointError);
      std::filesystem::remove(path);
    }
    nlohmann::json bad = to_json(toy_config("vit"));
    bad["famly"] = "vit";
    CHECK_THROWS_AS(model_config_from_json(bad), ConfigError);
  }
}
