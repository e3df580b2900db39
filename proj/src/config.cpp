#include "hrsketch/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "hrsketch/errors.hpp"

namespace hrsketch {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ContractError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ContractError("config key '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ContractError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

}  // namespace

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.scale = ModelScale::desk;
  c.epochs = 30;
  c.batch_size = 28;
  c.image_side = 72;
  c.augmentation = AugmentConfig{64, 5, 8};
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be at least 1");
  if (batch_size < 1) throw ContractError("batch size must be at least 1");
  if (!(schedule.initial > 0.0 && schedule.decay > 0.0 && schedule.late_decay > 0.0)) {
    throw ContractError("learning rates must be positive");
  }
  if (schedule.decay_every < 1 || schedule.late_every < 1) {
    throw ContractError("schedule periods must be positive");
  }
  if (lambda < 0.0) throw ContractError("lambda must be nonnegative");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in (0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("beta must lie in [0, 1]");
  if (margin < 0.0) throw ContractError("margin must be nonnegative");
  if (!(center_lr >= 0.0 && center_lr <= 1.0)) throw ContractError("center_lr must lie in [0, 1]");
  if (fold >= folds) throw ContractError("fold index out of range");
  if (augmentation.crop > image_side) throw ContractError("crop exceeds image side");
  negative_strategy();
}

NegativeStrategy TrainConfig::negative_strategy() const {
  if (negatives == "auto") {
    return loss == MetricKind::tcl ? NegativeStrategy::nearest : NegativeStrategy::random;
  }
  return negative_strategy_from_string(negatives);
}

JointLossConfig TrainConfig::joint_loss_config() const {
  return JointLossConfig{lambda, loss, negative_strategy()};
}

NetworkConfig TrainConfig::network_config(std::size_t num_classes) const {
  NetworkConfig n = scale == ModelScale::desk ? NetworkConfig::desk(num_classes)
                                              : NetworkConfig::full();
  n.num_classes = num_classes;
  n.input_side = augmentation.crop;
  n.alpha = alpha;
  n.beta = beta;
  n.block_kind = block;
  n.inner_skips = inner_skips;
  n.outer_skip = outer_skip;
  return n;
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k{
      "scale",       "epochs",      "batch_size",     "lr",         "lr_decay",
      "lr_decay_every", "lr_decay_until", "lr_late_decay", "lr_late_every", "lambda",
      "alpha",       "beta",        "margin",         "center_lr",  "center_init_std",
      "loss",        "negatives",   "block",          "inner_skips", "outer_skip",
      "seed",        "fold",        "folds",          "validation_fraction", "keep_best",
      "augment",     "image_side",  "crop",           "max_rotation", "max_shift"};
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "scale") {
    if (v == "full") scale = ModelScale::full;
    else if (v == "desk") scale = ModelScale::desk;
    else throw ContractError("scale must be full or desk");
  } else if (key == "epochs") epochs = to_uint(key, v);
  else if (key == "batch_size") batch_size = to_uint(key, v);
  else if (key == "lr") schedule.initial = to_double(key, v);
  else if (key == "lr_decay") schedule.decay = to_double(key, v);
  else if (key == "lr_decay_every") schedule.decay_every = static_cast<long>(to_uint(key, v));
  else if (key == "lr_decay_until") schedule.decay_until = static_cast<long>(to_uint(key, v));
  else if (key == "lr_late_decay") schedule.late_decay = to_double(key, v);
  else if (key == "lr_late_every") schedule.late_every = static_cast<long>(to_uint(key, v));
  else if (key == "lambda") lambda = to_double(key, v);
  else if (key == "alpha") alpha = to_double(key, v);
  else if (key == "beta") beta = to_double(key, v);
  else if (key == "margin") margin = to_double(key, v);
  else if (key == "center_lr") center_lr = to_double(key, v);
  else if (key == "center_init_std") center_init_std = to_double(key, v);
  else if (key == "loss") loss = metric_kind_from_string(v);
  else if (key == "negatives") {
    if (v != "auto") negative_strategy_from_string(v);
    negatives = v;
  } else if (key == "block") block = block_kind_from_string(v);
  else if (key == "inner_skips") inner_skips = to_bool(key, v);
  else if (key == "outer_skip") outer_skip = to_bool(key, v);
  else if (key == "seed") seed = to_uint(key, v);
  else if (key == "fold") fold = to_uint(key, v);
  else if (key == "folds") folds = to_uint(key, v);
  else if (key == "validation_fraction") validation_fraction = to_double(key, v);
  else if (key == "keep_best") keep_best = to_bool(key, v);
  else if (key == "augment") augment = to_bool(key, v);
  else if (key == "image_side") image_side = to_uint(key, v);
  else if (key == "crop") augmentation.crop = to_uint(key, v);
  else if (key == "max_rotation") augmentation.max_rotation = static_cast<int>(to_uint(key, v));
  else if (key == "max_shift") augmentation.max_shift = to_uint(key, v);
  else throw ContractError("unknown config key '" + key + "'");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"scale", scale == ModelScale::desk ? "desk" : "full"},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", schedule.initial},
          {"lr_decay", schedule.decay},
          {"lr_decay_every", schedule.decay_every},
          {"lr_decay_until", schedule.decay_until},
          {"lr_late_decay", schedule.late_decay},
          {"lr_late_every", schedule.late_every},
          {"lambda", lambda},
          {"alpha", alpha},
          {"beta", beta},
          {"margin", margin},
          {"center_lr", center_lr},
          {"center_init_std", center_init_std},
          {"loss", to_string(loss)},
          {"negatives", negatives},
          {"block", to_string(block)},
          {"inner_skips", inner_skips},
          {"outer_skip", outer_skip},
          {"seed", seed},
          {"fold", fold},
          {"folds", folds},
          {"validation_fraction", validation_fraction},
          {"keep_best", keep_best},
          {"augment", augment},
          {"image_side", image_side},
          {"crop", augmentation.crop},
          {"max_rotation", augmentation.max_rotation},
          {"max_shift", augmentation.max_shift}};
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw LoadError("cannot read config '" + file.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str());
}

TrainConfig resolve_config(TrainConfig base, const std::map<std::string, std::string>& file,
                           const std::map<std::string, std::string>& overrides) {
  // scale first so later keys refine the preset it selects
  auto apply_scale = [&](const std::map<std::string, std::string>& kv) {
    if (auto it = kv.find("scale"); it != kv.end() && trim(it->second) == "desk" &&
                                    base.scale != ModelScale::desk) {
      base = TrainConfig::desk();
    }
  };
  apply_scale(file);
  apply_scale(overrides);
  for (const auto& [k, v] : file) base.set(k, v);
  for (const auto& [k, v] : overrides) base.set(k, v);
  base.validate();
  return base;
}

}  // namespace hrsketch
