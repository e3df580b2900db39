#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hrsketch/config.hpp"
#include "hrsketch/data.hpp"
#include "hrsketch/losses.hpp"
#include "hrsketch/network.hpp"

namespace hrsketch {

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;      // mean joint loss over the epoch's steps
  double train_accuracy = 0.0;  // running, train mode
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;

  nlohmann::json to_json() const;
};

struct RunRecord {
  nlohmann::json config;
  std::vector<EpochRecord> epochs;
  std::vector<nlohmann::json> steps;  // one LossReport line per optimizer step
  std::size_t best_epoch = 0;
  double best_val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double final_train_accuracy = std::numeric_limits<double>::quiet_NaN();  // eval mode
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;

  // Hash of everything except wall-clock time.
  std::uint64_t fingerprint() const;
  nlohmann::json to_json() const;
};

// Indices into Dataset::samples for one run of a fold plan.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

Split split_from_plan(const Dataset& dataset, const FoldPlan& plan, std::size_t run);

// Deterministic evaluation view: no rotation or flip, shift centered in
// [0, max_shift], then the crop.
Raster eval_view(const Raster& image, const AugmentConfig& cfg);

struct TrainHooks {
  std::ostream* step_log = nullptr;  // JSON lines
  std::function<void(const EpochRecord&)> on_epoch;
  // dataset indices of each batch, in step order
  std::function<void(std::size_t epoch, const std::vector<std::size_t>&)> on_batch;
};

// Mini-batch training of model and centers. Every epoch visits each
// training sample once in a seeded order; each step runs augment ->
// forward (branch sampling) -> joint loss -> backward -> Adam -> center
// update. A non-finite loss throws TrainingError naming the batch ids.
RunRecord train(Network& model, CenterBank& bank, const Dataset& dataset, const Split& split,
                const TrainConfig& cfg, const TrainHooks& hooks = {});

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;  // cross-entropy
  std::size_t count = 0;
  std::vector<double> per_class_accuracy;        // NaN for classes absent from the split
  std::vector<std::size_t> per_class_count;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::string> misclassified;

  nlohmann::json to_json(const std::vector<std::string>& classes) const;
  std::string per_class_csv(const std::vector<std::string>& classes) const;
};

// Eval-mode forward (fused branches, running batch-norm statistics).
EvalResult evaluate(Network& model, const Dataset& dataset, std::span<const std::size_t> indices,
                    const AugmentConfig& view, std::size_t batch = 64);

// Pooled trunk features of the eval view, [indices.size() * d].
std::vector<double> extract_embeddings(Network& model, const Dataset& dataset,
                                       std::span<const std::size_t> indices,
                                       const AugmentConfig& view, std::size_t batch = 64);

struct TrainedModel {
  std::unique_ptr<Network> network;
  CenterBank bank;
  std::vector<std::string> classes;
  nlohmann::json train_config;
};

void save_model(const std::filesystem::path& path, Network& model, const CenterBank& bank,
                const std::vector<std::string>& classes, const TrainConfig& cfg);
TrainedModel load_model(const std::filesystem::path& path);
// Throws ContractError unless the dataset's class registry equals the
// checkpoint's.
void check_registry(const TrainedModel& model, const Dataset& dataset);

// Fold plan -> fresh model -> train -> test-fold accuracy.
struct Experiment {
  RunRecord record;
  std::unique_ptr<Network> network;
  CenterBank bank;
  Split split;
};
Experiment run_experiment(const Dataset& dataset, const TrainConfig& cfg,
                          const TrainHooks& hooks = {});

struct SweepRow {
  double value = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  bool in_stable_band = false;
  std::uint64_t fingerprint = 0;
};

struct SweepResult {
  std::string param;
  std::vector<SweepRow> rows;
  double best_value = 0.0;
  // m sweeps flag the interior band [2.5, 5.5]
  bool has_band = false;
  double band_lo = 0.0, band_hi = 0.0;
  double band_spread = 0.0;  // max - min test accuracy inside the band

  std::string csv() const;
};

// One run per value on a shared seed; param is beta, m (or margin) or
// alpha. Throws ContractError for an empty value list or unknown param.
SweepResult sweep(const Dataset& dataset, const TrainConfig& base, const std::string& param,
                  const std::vector<double>& values,
                  const std::function<void(const SweepRow&)>& progress = {});

enum class AblationKind { block, residual_level, loss };
AblationKind ablation_kind_from_string(const std::string& s);

struct AblationRow {
  std::string variant;
  TrainConfig config;
  double test_accuracy = 0.0;
  double delta = 0.0;  // vs. the first row
  std::uint64_t fingerprint = 0;
};

// Matched-seed variants: basic vs. multi-scale blocks; inner-only,
// outer-only and both shortcut levels; plain (m = 5.0) vs. compact
// (m = 4.5) metric loss.
std::vector<AblationRow> ablate(const Dataset& dataset, const TrainConfig& base,
                                AblationKind kind,
                                const std::function<void(const AblationRow&)>& progress = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace hrsketch
