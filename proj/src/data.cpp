#include "hrsketch/data.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <set>

#include "hrsketch/errors.hpp"

namespace fs = std::filesystem;

namespace hrsketch {

namespace {

cv::Mat to_mat(const Raster& r) {
  cv::Mat m(static_cast<int>(r.side), static_cast<int>(r.side), CV_64F);
  std::copy(r.pixels.begin(), r.pixels.end(), m.ptr<double>());
  return m;
}

Raster from_mat(const cv::Mat& m) {
  Raster r(static_cast<std::size_t>(m.rows), 0.0);
  cv::Mat d;
  m.convertTo(d, CV_64F);
  for (int y = 0; y < d.rows; ++y) {
    const double* row = d.ptr<double>(y);
    std::copy(row, row + d.cols, r.pixels.begin() + y * d.cols);
  }
  return r;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  static const std::set<std::string> known{".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".pbm"};
  return known.count(ext) > 0;
}

}  // namespace

Raster read_raster(const fs::path& file, std::size_t side) {
  cv::Mat img = cv::imread(file.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw LoadError("cannot decode image '" + file.string() + "'");
  if (img.rows != static_cast<int>(side) || img.cols != static_cast<int>(side)) {
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(static_cast<int>(side), static_cast<int>(side)), 0, 0,
               cv::INTER_AREA);
    img = resized;
  }
  cv::Mat unit;
  img.convertTo(unit, CV_64F, 1.0 / 255.0);
  return from_mat(unit);
}

void write_png(const Raster& r, const fs::path& file) {
  cv::Mat m = to_mat(r);
  cv::Mat out;
  m.convertTo(out, CV_8U, 255.0);
  if (!cv::imwrite(file.string(), out)) throw LoadError("cannot write '" + file.string() + "'");
}

Dataset load_dataset(const fs::path& root, std::size_t side) {
  if (!fs::is_directory(root)) throw LoadError("dataset root '" + root.string() + "' not found");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw LoadError("no class directories under '" + root.string() + "'");

  Dataset ds;
  for (const auto& dir : class_dirs) {
    const std::string name = dir.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const std::size_t label = ds.classes.size();
    std::size_t loaded = 0;
    for (const auto& f : files) {
      try {
        ds.samples.push_back({read_raster(f, side), label, name + "/" + f.stem().string()});
        ++loaded;
      } catch (const LoadError& e) {
        std::cerr << "warning: skipping " << e.what() << '\n';
        ++ds.skipped;
      }
    }
    if (loaded == 0) throw LoadError("class directory '" + name + "' has no readable images");
    ds.classes.push_back(name);
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  for (const auto& c : dataset.classes) fs::create_directories(root / c);
  for (const auto& s : dataset.samples) {
    if (s.label >= dataset.classes.size()) throw IndexError("sample label out of range");
    const fs::path id(s.id);
    write_png(s.image, root / dataset.classes[s.label] / (id.filename().string() + ".png"));
  }
}

Raster rotate(const Raster& r, double degrees) {
  if (degrees == 0.0) return r;
  const double c = (static_cast<double>(r.side) - 1.0) / 2.0;
  cv::Mat rot = cv::getRotationMatrix2D(cv::Point2d(c, c), degrees, 1.0);
  cv::Mat out;
  cv::warpAffine(to_mat(r), out, rot, cv::Size(static_cast<int>(r.side), static_cast<int>(r.side)),
                 cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar(1.0));
  return from_mat(out);
}

Raster flip_horizontal(const Raster& r) {
  Raster out(r.side, 1.0);
  for (std::size_t y = 0; y < r.side; ++y) {
    for (std::size_t x = 0; x < r.side; ++x) out.at(y, x) = r.at(y, r.side - 1 - x);
  }
  return out;
}

Raster shift(const Raster& r, std::size_t dx, std::size_t dy) {
  Raster out(r.side, 1.0);
  for (std::size_t y = dy; y < r.side; ++y) {
    for (std::size_t x = dx; x < r.side; ++x) out.at(y, x) = r.at(y - dy, x - dx);
  }
  return out;
}

Raster crop_top_left(const Raster& r, std::size_t side) {
  if (side > r.side) {
    throw ContractError("crop " + std::to_string(side) + " exceeds canvas " +
                        std::to_string(r.side));
  }
  Raster out(side, 1.0);
  for (std::size_t y = 0; y < side; ++y) {
    std::copy_n(r.pixels.begin() + static_cast<std::ptrdiff_t>(y * r.side), side,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y * side));
  }
  return out;
}

AugmentParams draw_augmentation(const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  const auto span = static_cast<std::uint64_t>(2 * cfg.max_rotation + 1);
  p.rotation_deg = static_cast<int>(uniform_index(rng, span)) - cfg.max_rotation;
  p.flip = bernoulli(rng, 0.5);
  p.shift_x = uniform_index(rng, cfg.max_shift + 1);
  p.shift_y = uniform_index(rng, cfg.max_shift + 1);
  return p;
}

Raster apply_augmentation(const Raster& image, const AugmentParams& p, const AugmentConfig& cfg) {
  if (cfg.crop > image.side) {
    throw ContractError("crop " + std::to_string(cfg.crop) + " exceeds canvas " +
                        std::to_string(image.side));
  }
  Raster r = rotate(image, static_cast<double>(p.rotation_deg));
  if (p.flip) r = flip_horizontal(r);
  if (p.shift_x || p.shift_y) r = shift(r, p.shift_x, p.shift_y);
  return crop_top_left(r, cfg.crop);
}

SketchSample augment(const SketchSample& sample, Rng& rng, const AugmentConfig& cfg) {
  SketchSample out;
  out.image = apply_augmentation(sample.image, draw_augmentation(cfg, rng), cfg);
  out.label = sample.label;
  out.id = sample.id;
  return out;
}

std::size_t augmentation_space_size(const AugmentConfig& cfg) {
  const auto rotations = static_cast<std::size_t>(2 * cfg.max_rotation + 1);
  return rotations * (cfg.max_shift + 1) * (cfg.max_shift + 1) * 2;
}

Tensor to_batch(const std::vector<const Raster*>& images) {
  if (images.empty()) throw ContractError("empty batch");
  const std::size_t side = images.front()->side;
  std::vector<double> v;
  v.reserve(images.size() * side * side);
  for (const Raster* r : images) {
    if (r->side != side) throw DimensionError("batch rasters differ in size");
    v.insert(v.end(), r->pixels.begin(), r->pixels.end());
  }
  return Tensor(Shape{images.size(), 1, side, side}, std::move(v));
}

// ---------------------------------------------------------------------------
// folds

std::vector<std::string> FoldPlan::test_ids(std::size_t run) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of) {
    if (f == run) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldPlan::train_ids(std::size_t run) const {
  const auto& val = validation_ids(run);
  std::set<std::string> held(val.begin(), val.end());
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of) {
    if (f != run && !held.count(id)) out.push_back(id);
  }
  return out;
}

const std::vector<std::string>& FoldPlan::validation_ids(std::size_t run) const {
  if (run >= validation.size()) throw IndexError("run " + std::to_string(run) + " out of range");
  return validation[run];
}

nlohmann::json FoldPlan::to_json() const {
  return {{"n_folds", n_folds},
          {"seed", seed},
          {"validation_fraction", validation_fraction},
          {"fold_of", fold_of},
          {"validation", validation}};
}

FoldPlan FoldPlan::from_json(const nlohmann::json& j) {
  FoldPlan p;
  p.n_folds = j.at("n_folds");
  p.seed = j.at("seed");
  p.validation_fraction = j.at("validation_fraction");
  p.fold_of = j.at("fold_of").get<std::map<std::string, std::size_t>>();
  p.validation = j.at("validation").get<std::vector<std::vector<std::string>>>();
  return p;
}

FoldPlan make_folds(std::vector<LabeledId> items, std::uint64_t seed, std::size_t n_folds,
                    double validation_fraction) {
  if (n_folds < 2) throw ContractError("need at least two folds");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ContractError("validation fraction must lie in [0, 1)");
  }
  std::sort(items.begin(), items.end(),
            [](const LabeledId& a, const LabeledId& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].id == items[i - 1].id) throw ContractError("duplicate sample id " + items[i].id);
  }
  std::map<std::size_t, std::vector<std::string>> by_class;
  for (const auto& it : items) by_class[it.label].push_back(it.id);

  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.seed = seed;
  plan.validation_fraction = validation_fraction;
  for (auto& [label, ids] : by_class) {
    if (ids.size() < n_folds) {
      throw ContractError("class " + std::to_string(label) + " has " + std::to_string(ids.size()) +
                          " samples, fewer than " + std::to_string(n_folds) + " folds");
    }
    Rng rng(mix_seed({seed, label, 0xF01D}));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[uniform_index(rng, i)]);
    }
    for (std::size_t i = 0; i < ids.size(); ++i) plan.fold_of[ids[i]] = i % n_folds;
  }

  plan.validation.resize(n_folds);
  for (std::size_t run = 0; run < n_folds; ++run) {
    for (const auto& [label, ids] : by_class) {
      std::vector<std::string> pool;
      for (const auto& id : ids) {
        if (plan.fold_of[id] != run) pool.push_back(id);
      }
      std::sort(pool.begin(), pool.end());
      Rng rng(mix_seed({seed, label, run, 0x7A1}));
      for (std::size_t i = pool.size(); i > 1; --i) {
        std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
      }
      const auto take = static_cast<std::size_t>(
          std::llround(validation_fraction * static_cast<double>(pool.size())));
      plan.validation[run].insert(plan.validation[run].end(), pool.begin(),
                                  pool.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(plan.validation[run].begin(), plan.validation[run].end());
  }
  return plan;
}

FoldPlan make_folds(const Dataset& dataset, std::uint64_t seed, std::size_t n_folds,
                    double validation_fraction) {
  std::vector<LabeledId> items;
  items.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) items.push_back({s.id, s.label});
  return make_folds(std::move(items), seed, n_folds, validation_fraction);
}

// ---------------------------------------------------------------------------
// synthetic sketches

namespace {

constexpr std::size_t kTemplates = 12;
const char* kTemplateNames[kTemplates] = {"circle",  "triangle", "square", "plus",
                                          "cross",   "star",     "bars",   "arrow",
                                          "hexagon", "rings",    "house",  "zigzag"};

using Poly = std::vector<cv::Point2d>;

Poly regular_polygon(int n, double phase_deg) {
  Poly p;
  for (int i = 0; i < n; ++i) {
    const double a = (phase_deg + 360.0 * i / n) * std::numbers::pi / 180.0;
    p.emplace_back(std::cos(a), std::sin(a));
  }
  p.push_back(p.front());
  return p;
}

// Strokes of one template in unit coordinates (radius 1 around the origin).
std::vector<Poly> template_strokes(std::size_t t) {
  switch (t) {
    case 0: return {regular_polygon(40, 0)};
    case 1: return {regular_polygon(3, -90)};
    case 2: return {regular_polygon(4, 45)};
    case 3: return {{{-1, 0}, {1, 0}}, {{0, -1}, {0, 1}}};
    case 4: return {{{-0.75, -0.75}, {0.75, 0.75}}, {{-0.75, 0.75}, {0.75, -0.75}}};
    case 5: {
      Poly star;
      for (int i = 0; i <= 10; ++i) {
        const double a = (-90.0 + 36.0 * i) * std::numbers::pi / 180.0;
        const double rad = (i % 2 == 0) ? 1.0 : 0.4;
        star.emplace_back(rad * std::cos(a), rad * std::sin(a));
      }
      return {star};
    }
    case 6: return {{{-1, -0.6}, {1, -0.6}}, {{-1, 0}, {1, 0}}, {{-1, 0.6}, {1, 0.6}}};
    case 7: return {{{-1, 0}, {1, 0}}, {{0.45, -0.5}, {1, 0}, {0.45, 0.5}}};
    case 8: return {regular_polygon(6, 0)};
    case 9: {
      Poly inner = regular_polygon(40, 0);
      for (auto& q : inner) q *= 0.45;
      return {regular_polygon(40, 0), inner};
    }
    case 10:
      return {{{-0.7, -0.1}, {-0.7, 0.9}, {0.7, 0.9}, {0.7, -0.1}, {-0.7, -0.1}},
              {{-0.9, -0.1}, {0, -0.95}, {0.9, -0.1}}};
    default:
      return {{{-1, 0.5}, {-0.6, -0.5}, {-0.2, 0.5}, {0.2, -0.5}, {0.6, 0.5}, {1, -0.5}}};
  }
}

Raster render_sketch(std::size_t cls, std::size_t side, Rng& rng) {
  const double s = static_cast<double>(side);
  cv::Mat canvas(static_cast<int>(side), static_cast<int>(side), CV_8U, cv::Scalar(255));
  const int thickness = std::max(1, static_cast<int>(std::lround(s / 40.0)));
  const double radius = uniform(rng, 0.24, 0.34) * s;
  const cv::Point2d center(s / 2.0 + uniform(rng, -0.12, 0.12) * s,
                           s / 2.0 + uniform(rng, -0.12, 0.12) * s);
  const double tilt = uniform(rng, -15.0, 15.0) * std::numbers::pi / 180.0;
  const double ct = std::cos(tilt), st = std::sin(tilt);
  const double jitter = 0.06;

  auto strokes = template_strokes(cls % kTemplates);
  for (const auto& poly : strokes) {
    std::vector<cv::Point> pts;
    for (const auto& q : poly) {
      const double x = q.x + uniform(rng, -jitter, jitter);
      const double y = q.y + uniform(rng, -jitter, jitter);
      pts.emplace_back(static_cast<int>(std::lround(center.x + radius * (ct * x - st * y))),
                       static_cast<int>(std::lround(center.y + radius * (st * x + ct * y))));
    }
    cv::polylines(canvas, pts, false, cv::Scalar(0), thickness, cv::LINE_8);
  }
  // classes beyond the template set add a row of dots below the figure
  const std::size_t dots = cls / kTemplates;
  for (std::size_t i = 0; i < dots; ++i) {
    cv::circle(canvas,
               cv::Point(static_cast<int>(center.x + (static_cast<double>(i) - 0.5 * (dots - 1)) *
                                                         0.3 * radius),
                         static_cast<int>(center.y + 0.2 * radius)),
               thickness + 1, cv::Scalar(0), cv::FILLED, cv::LINE_8);
  }
  cv::Mat unit;
  canvas.convertTo(unit, CV_64F, 1.0 / 255.0);
  return from_mat(unit);
}

}  // namespace

std::size_t synthetic_template_count() { return kTemplates; }

Dataset generate_synthetic_sketches(std::size_t n_classes, std::size_t per_class,
                                    std::size_t side, std::uint64_t seed) {
  if (side < 32) throw ContractError("synthetic sketches need side >= 32");
  if (n_classes == 0) throw ContractError("need at least one class");
  Dataset ds;
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::string name = kTemplateNames[k % kTemplates];
    if (k >= kTemplates) name += "_" + std::to_string(k / kTemplates);
    ds.classes.push_back(std::to_string(k / 10) + std::to_string(k % 10) + "_" + name);
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Rng rng(mix_seed({seed, k, i}));
      char id[32];
      std::snprintf(id, sizeof(id), "%05zu", i);
      ds.samples.push_back({render_sketch(k, side, rng), k, ds.classes[k] + "/" + id});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// feature clouds

FeatureCloud generate_feature_cloud(const FeatureCloudSpec& spec) {
  if (spec.dim < 2) throw ContractError("feature cloud needs d >= 2");
  if (spec.n_classes == 0 || spec.per_class == 0) throw ContractError("empty feature cloud");
  if (spec.spread < 0.0 || spec.nuisance_spread < 0.0) throw ContractError("negative spread");
  const std::size_t signal = spec.signal_dims == 0 ? spec.dim : std::min(spec.signal_dims, spec.dim);
  FeatureCloud cloud;
  cloud.spec = spec;
  Rng rng(spec.seed);
  cloud.means.assign(spec.n_classes * spec.dim, 0.0);
  for (std::size_t k = 0; k < spec.n_classes; ++k) {
    for (std::size_t j = 0; j < signal; ++j) {
      cloud.means[k * spec.dim + j] = normal(rng, 0.0, spec.mean_scale);
    }
  }
  const std::size_t n = spec.n_classes * spec.per_class;
  cloud.points.resize(n * spec.dim);
  cloud.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % spec.n_classes;
    cloud.labels[i] = k;
    for (std::size_t j = 0; j < spec.dim; ++j) {
      const double sd = j < signal ? spec.spread : spec.nuisance_spread;
      cloud.points[i * spec.dim + j] = cloud.means[k * spec.dim + j] + normal(rng, 0.0, sd);
    }
  }
  return cloud;
}

FeatureCloud generate_feature_cloud(std::size_t n_classes, std::size_t dim, double spread,
                                    std::uint64_t seed) {
  FeatureCloudSpec spec;
  spec.n_classes = n_classes;
  spec.dim = dim;
  spec.spread = spread;
  spec.seed = seed;
  return generate_feature_cloud(spec);
}

}  // namespace hrsketch
