#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hrsketch/blocks.hpp"
#include "hrsketch/layers.hpp"

namespace hrsketch {

enum class BlockKind { multi_scale, basic };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& s);

struct StageSpec {
  std::size_t channels = 0;
  std::size_t blocks = 0;
};

struct NetworkConfig {
  std::size_t input_side = 224;
  std::size_t input_channels = 1;
  std::vector<StageSpec> stages{{64, 3}, {128, 4}, {256, 6}, {512, 3}};
  std::size_t num_classes = 250;
  double alpha = 0.75;
  double beta = 0.7;
  BlockKind block_kind = BlockKind::multi_scale;
  bool inner_skips = true;
  bool outer_skip = true;
  bool batchnorm = true;
  bool post_activation = true;

  // front end: 7x7/2 conv (pad 3) then 3x3/2 max-pool (pad 1)
  std::size_t stem_kernel = 7, stem_stride = 2, stem_padding = 3;
  std::size_t pool_kernel = 3, pool_stride = 2, pool_padding = 1;
  // long shortcut around the whole trunk
  std::size_t outer_kernel = 9, outer_stride = 8, outer_padding = 1;

  // 224x224 input, stages 64/128/256/512 x 3/4/6/3, 250 classes
  static NetworkConfig full();
  // 64x64 input, stages 16/32/64/128 x 2 each
  static NetworkConfig desk(std::size_t num_classes);

  // Throws ContractError on a malformed plan, including a long shortcut whose
  // output grid does not land on the trunk's output grid.
  void validate() const;

  std::size_t front_end_side() const;
  std::size_t trunk_output_side() const;
  std::size_t embedding_dim() const { return stages.back().channels; }

  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
};

struct ForwardOutput {
  Tensor logits;     // [N, classes] (or [classes] for unbatched input)
  Tensor embedding;  // [N, d] pooled trunk features feeding the metric loss
};

// Named intermediate shapes in [C,H,W] form, recorded during a forward.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

struct Stage {
  std::vector<std::unique_ptr<ResidualBlock>> blocks;
  std::optional<ConvUnit> projection;  // inner shortcut
};

// Front end -> four inner residual blocks (each a stack of residual units
// wrapped by a 1x1-projected shortcut) -> long shortcut adding
// beta * P(f_s) -> two-branch head.
class Network {
 public:
  explicit Network(NetworkConfig cfg);

  void init(std::uint64_t seed);

  Tensor front_end(const Tensor& sketch, ForwardContext& ctx, ShapeTrace* trace = nullptr);
  Tensor hierarchical_forward(const Tensor& shallow, ForwardContext& ctx,
                              ShapeTrace* trace = nullptr);
  ForwardOutput classify(const Tensor& features, ShapeTrace* trace = nullptr);
  ForwardOutput forward(const Tensor& sketch, ForwardContext& ctx, ShapeTrace* trace = nullptr);

  void visit(const ParamVisitor& fn);
  std::vector<Tensor> parameters();
  std::map<std::string, Tensor> state();
  void load_state(const std::map<std::string, Tensor>& tensors);
  void zero_grad();

  std::size_t count_parameters();
  std::size_t stage_conv_weight_count() const;
  std::size_t active_stage_conv_weight_count() const;

  const NetworkConfig& config() const { return cfg_; }

  ConvUnit stem;
  std::vector<Stage> stages;
  std::optional<ConvUnit> outer_projection;
  Conv2d head;

 private:
  NetworkConfig cfg_;
};

}  // namespace hrsketch
