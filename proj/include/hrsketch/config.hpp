#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hrsketch/data.hpp"
#include "hrsketch/losses.hpp"
#include "hrsketch/network.hpp"
#include "hrsketch/optim.hpp"

namespace hrsketch {

enum class ModelScale { full, desk };

// Everything that determines a training run. Together with the dataset it
// fixes the RunRecord bit for bit.
struct TrainConfig {
  ModelScale scale = ModelScale::full;
  std::size_t epochs = 180;
  std::size_t batch_size = 28;
  LrSchedule schedule;

  double lambda = 0.024;
  double alpha = 0.75;
  double beta = 0.7;
  double margin = 4.5;
  double center_lr = 0.05;  // eta * m * (samples per class in a batch) must stay below 2
  double center_init_std = 0.01;
  MetricKind loss = MetricKind::ctcl;
  std::string negatives = "auto";  // auto | random | nearest
  BlockKind block = BlockKind::multi_scale;
  bool inner_skips = true;
  bool outer_skip = true;

  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::size_t folds = 3;
  double validation_fraction = 0.15;
  bool keep_best = true;

  bool augment = true;
  std::size_t image_side = 255;
  AugmentConfig augmentation;  // crop 224, rotation 5, shift 31

  // CPU-sized preset: 72-pixel canvases cropped to 64, reduced stage plan.
  static TrainConfig desk();

  void validate() const;
  NegativeStrategy negative_strategy() const;
  JointLossConfig joint_loss_config() const;
  NetworkConfig network_config(std::size_t num_classes) const;

  // key = value form; unknown keys or malformed values throw ContractError.
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();
  nlohmann::json to_json() const;
};

// Plain-text config: one `key = value` per line, '#' starts a comment.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& file);
std::map<std::string, std::string> parse_key_values(const std::string& text);

// File values first, then overrides (CLI flags win).
TrainConfig resolve_config(TrainConfig base, const std::map<std::string, std::string>& file,
                           const std::map<std::string, std::string>& overrides);

}  // namespace hrsketch
