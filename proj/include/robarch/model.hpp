#pragma once

#include <array>
#include <cstdint>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "robarch/nn.hpp"
#include "robarch/tensor.hpp"

namespace robarch {

// `linear` and `mlp` are small reference classifiers used by tests and
// calibration runs.
enum class Family { resnet_ladder, vit, xcit, convnext, linear, mlp };
enum class NormKind { batch, layer };

struct InputSize {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  bool operator==(const InputSize&) const = default;
};

struct ModelConfig {
  Family family = Family::resnet_ladder;
  std::array<std::size_t, 4> stage_blocks{3, 4, 6, 3};
  nn::Activation activation = nn::Activation::relu;
  bool depthwise_conv = false;
  double width_multiplier = 1.0;
  bool patchify_stem = false;
  bool inverted_bottleneck = false;
  bool reduced_norm_act = false;
  NormKind norm_kind = NormKind::batch;
  bool separate_downsample = false;
  std::optional<double> layer_scale;
  std::size_t token_size = 4;
  std::size_t num_heads = 4;
  // Ladder/convnext: stage-1 width. vit/xcit: token dimension.
  std::size_t embed_dim = 8;
  std::size_t depth = 4;        // vit/xcit blocks
  std::size_t hidden_dim = 64;  // mlp hidden width
  InputSize input_size;
  std::size_t num_classes = 10;

  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError naming the offending fields.
void validate(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& scope = "model");

const char* family_name(Family family);

// Desk-scale starting points.
ModelConfig resnet_baseline_config(InputSize input = {}, std::size_t num_classes = 10,
                                   std::size_t width = 8);
ModelConfig vit_config(InputSize input = {}, std::size_t num_classes = 10, std::size_t dim = 96,
                       std::size_t heads = 4, std::size_t token_size = 8, std::size_t depth = 4);
ModelConfig xcit_config(InputSize input = {}, std::size_t num_classes = 10, std::size_t dim = 96,
                        std::size_t heads = 4, std::size_t token_size = 8, std::size_t depth = 4);
ModelConfig linear_config(InputSize input, std::size_t num_classes);
ModelConfig mlp_config(InputSize input, std::size_t num_classes, std::size_t hidden);

using StateDict = std::map<std::string, Tensor>;

class Model {
 public:
  Model(ModelConfig config, nn::LayerPtr network);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  nn::Mode mode() const { return mode_; }
  void set_mode(nn::Mode mode) { mode_ = mode; }

  // Logits (N, num_classes). Train mode updates BatchNorm statistics.
  Tensor forward(const Tensor& x, nn::Captures* captures = nullptr) const;

  // Low-level pass used by training and attacks.
  Tensor forward(const Tensor& x, nn::Node& node, const nn::PassState& state) const;
  Tensor backward(const Tensor& grad_logits, nn::Node& node, const nn::PassState& state) const;

  std::vector<nn::Parameter*>& parameters() { return params_; }
  const std::vector<nn::Parameter*>& parameters() const { return params_; }
  const std::vector<nn::Buffer>& buffers() const { return buffers_; }
  nn::ParamGrads make_grads() const;

  std::size_t parameter_count() const;

  // Parameters and buffers by name.
  StateDict state() const;
  void load_state(const StateDict& state);

  // Flattened layer description; blocks appear as "block:<label>" ... "end".
  std::vector<std::string> describe() const;

  Model clone() const;

  void check_input(const Tensor& x) const;

 private:
  ModelConfig config_;
  nn::LayerPtr network_;
  std::vector<nn::Parameter*> params_;
  std::vector<nn::Buffer> buffers_;
  nn::Mode mode_ = nn::Mode::eval;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

std::size_t count_parameters(const Model& model);

// Block descriptions of the model in order: label plus its layer strings.
struct BlockDescription {
  std::string label;
  std::vector<std::string> layers;
};
std::vector<BlockDescription> describe_blocks(const Model& model);

}  // namespace robarch
