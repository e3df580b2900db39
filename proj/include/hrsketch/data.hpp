#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hrsketch/rng.hpp"
#include "hrsketch/tensor.hpp"

namespace hrsketch {

// Square single-channel image, row-major, values in [0, 1]. Background is
// white (1.0) and strokes are dark.
struct Raster {
  std::size_t side = 0;
  std::vector<double> pixels;

  Raster() = default;
  Raster(std::size_t side, double fill) : side(side), pixels(side * side, fill) {}
  double at(std::size_t row, std::size_t col) const { return pixels[row * side + col]; }
  double& at(std::size_t row, std::size_t col) { return pixels[row * side + col]; }
  bool operator==(const Raster&) const = default;
};

struct SketchSample {
  Raster image;
  std::size_t label = 0;
  std::string id;
};

struct Dataset {
  std::vector<std::string> classes;  // class registry, index == label
  std::vector<SketchSample> samples;
  std::size_t skipped = 0;           // unreadable files seen while loading
};

// root/<class>/<image>. Classes are ordered by directory name, images by
// file name; every image is converted to grayscale and resized to
// side x side.
Dataset load_dataset(const std::filesystem::path& root, std::size_t side = 255);
// Writes root/<class>/<id basename>.png, 8-bit.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);

Raster read_raster(const std::filesystem::path& file, std::size_t side);
void write_png(const Raster& r, const std::filesystem::path& file);

// Training-time augmentation: integer-degree rotation in
// [-max_rotation, max_rotation], horizontal flip, shift of 0..max_shift
// pixels right and down, then the top-left crop x crop window.
struct AugmentConfig {
  std::size_t crop = 224;
  int max_rotation = 5;
  std::size_t max_shift = 31;
};

struct AugmentParams {
  int rotation_deg = 0;
  bool flip = false;
  std::size_t shift_x = 0;  // content moves right
  std::size_t shift_y = 0;  // content moves down
};

AugmentParams draw_augmentation(const AugmentConfig& cfg, Rng& rng);
Raster apply_augmentation(const Raster& image, const AugmentParams& p, const AugmentConfig& cfg);
SketchSample augment(const SketchSample& sample, Rng& rng, const AugmentConfig& cfg = {});
// rotations x shifts_x x shifts_y x flips
std::size_t augmentation_space_size(const AugmentConfig& cfg);

Raster rotate(const Raster& r, double degrees);
Raster flip_horizontal(const Raster& r);
Raster shift(const Raster& r, std::size_t dx, std::size_t dy);
Raster crop_top_left(const Raster& r, std::size_t side);

// Pack rasters into a [N,1,side,side] tensor.
Tensor to_batch(const std::vector<const Raster*>& images);

// Stratified assignment of sample ids to folds plus, for each run (fold k
// held out for testing), a validation subset drawn from that run's
// training ids.
struct FoldPlan {
  std::size_t n_folds = 3;
  std::uint64_t seed = 0;
  double validation_fraction = 0.15;
  std::map<std::string, std::size_t> fold_of;
  std::vector<std::vector<std::string>> validation;  // per run

  std::vector<std::string> test_ids(std::size_t run) const;
  std::vector<std::string> train_ids(std::size_t run) const;  // excludes validation
  const std::vector<std::string>& validation_ids(std::size_t run) const;

  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json& j);
};

struct LabeledId {
  std::string id;
  std::size_t label = 0;
};

FoldPlan make_folds(std::vector<LabeledId> items, std::uint64_t seed, std::size_t n_folds = 3,
                    double validation_fraction = 0.15);
FoldPlan make_folds(const Dataset& dataset, std::uint64_t seed, std::size_t n_folds = 3,
                    double validation_fraction = 0.15);

// Seeded stroke drawings, one shape family per class (circle, triangle,
// square, plus, cross, star, bars, arrow, ...) with random placement, size,
// tilt and vertex jitter. Binary rasters.
Dataset generate_synthetic_sketches(std::size_t n_classes, std::size_t per_class,
                                    std::size_t side, std::uint64_t seed);
std::size_t synthetic_template_count();

// Gaussian class blobs.
struct FeatureCloudSpec {
  std::size_t n_classes = 20;
  std::size_t dim = 32;
  std::size_t per_class = 50;
  double spread = 1.0;      // per-coordinate stddev within the signal subspace
  double mean_scale = 3.0;  // per-coordinate stddev of the class means
  // Class means live in the first signal_dims coordinates (0 = all). The
  // remaining coordinates carry class-independent noise of stddev
  // nuisance_spread.
  std::size_t signal_dims = 0;
  double nuisance_spread = 0.0;
  std::uint64_t seed = 0;
};

struct FeatureCloud {
  FeatureCloudSpec spec;
  std::vector<double> means;   // [n_classes * dim]
  std::vector<double> points;  // [N * dim]
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(points).subspan(i * spec.dim, spec.dim);
  }
  std::span<const double> mean(std::size_t k) const {
    return std::span<const double>(means).subspan(k * spec.dim, spec.dim);
  }
};

FeatureCloud generate_feature_cloud(const FeatureCloudSpec& spec);
FeatureCloud generate_feature_cloud(std::size_t n_classes, std::size_t dim, double spread,
                                    std::uint64_t seed);

}  // namespace hrsketch
