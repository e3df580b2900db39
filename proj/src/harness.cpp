#include "hrsketch/harness.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <sstream>

#include "hrsketch/checkpoint.hpp"
#include "hrsketch/errors.hpp"
#include "hrsketch/ops.hpp"
#include "hrsketch/optim.hpp"

namespace hrsketch {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

struct Batch {
  std::vector<Raster> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> ids;
};

Tensor pack(const std::vector<Raster>& images) {
  std::vector<const Raster*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& r : images) ptrs.push_back(&r);
  return to_batch(ptrs);
}

}  // namespace

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"lr", lr},
          {"train_loss", train_loss},
          {"train_accuracy", train_accuracy},
          {"val_loss", finite_or_null(val_loss)},
          {"val_accuracy", finite_or_null(val_accuracy)},
          {"mean_d_pos", mean_d_pos},
          {"mean_d_neg", mean_d_neg}};
}

std::uint64_t RunRecord::fingerprint() const {
  std::uint64_t h = fnv1a(config.dump());
  for (const auto& e : epochs) h = fnv1a(e.to_json().dump(), h);
  for (const auto& s : steps) h = fnv1a(s.dump(), h);
  nlohmann::json tail{{"best_epoch", best_epoch},
                      {"best_val", finite_or_null(best_val_accuracy)},
                      {"train", finite_or_null(final_train_accuracy)},
                      {"test", finite_or_null(test_accuracy)}};
  return fnv1a(tail.dump(), h);
}

nlohmann::json RunRecord::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) ep.push_back(e.to_json());
  return {{"config", config},
          {"epochs", ep},
          {"steps", steps.size()},
          {"best_epoch", best_epoch},
          {"best_val_accuracy", finite_or_null(best_val_accuracy)},
          {"final_train_accuracy", finite_or_null(final_train_accuracy)},
          {"test_accuracy", finite_or_null(test_accuracy)},
          {"wall_seconds", wall_seconds},
          {"fingerprint", fingerprint()}};
}

Split split_from_plan(const Dataset& dataset, const FoldPlan& plan, std::size_t run) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) index[dataset.samples[i].id] = i;
  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end()) throw ContractError("fold plan names unknown sample '" + id + "'");
      out.push_back(it->second);
    }
    std::sort(out.begin(), out.end());
    return out;
  };
  return Split{resolve(plan.train_ids(run)), resolve(plan.validation_ids(run)),
               resolve(plan.test_ids(run))};
}

Raster eval_view(const Raster& image, const AugmentConfig& cfg) {
  AugmentParams p;
  p.shift_x = p.shift_y = cfg.max_shift / 2;
  return apply_augmentation(image, p, cfg);
}

RunRecord train(Network& model, CenterBank& bank, const Dataset& dataset, const Split& split,
                const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (split.train.empty()) throw ContractError("empty training split");
  if (bank.num_classes() != dataset.classes.size()) {
    throw ContractError("center bank and dataset disagree on the number of classes");
  }
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = cfg.to_json();

  Adam adam(model.parameters(), AdamOptions{cfg.schedule.initial});
  const JointLossConfig loss_cfg = cfg.joint_loss_config();
  Rng branch_rng(mix_seed({cfg.seed, 0x6272616e6368ULL}));
  Rng negative_rng(mix_seed({cfg.seed, 0x6e6567ULL}));

  std::map<std::string, Tensor> best_state;
  Tensor best_centers;
  double best_val = -1.0;
  std::size_t step = 0;

  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.at(static_cast<long>(epoch));
    adam.set_lr(lr);
    Rng order_rng(mix_seed({cfg.seed, 0x6f72646572ULL, epoch}));
    shuffle_indices(order, order_rng);

    EpochRecord er;
    er.epoch = epoch;
    er.lr = lr;
    std::size_t correct = 0, seen = 0, n_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Batch b;
      if (hooks.on_batch) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
        const auto last = order.begin() + static_cast<std::ptrdiff_t>(end);
        hooks.on_batch(epoch, std::vector<std::size_t>(first, last));
      }
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = dataset.samples[order[i]];
        if (cfg.augment) {
          Rng aug_rng(mix_seed({cfg.seed, fnv1a(s.id), epoch}));
          b.images.push_back(
              apply_augmentation(s.image, draw_augmentation(cfg.augmentation, aug_rng),
                                 cfg.augmentation));
        } else {
          b.images.push_back(eval_view(s.image, cfg.augmentation));
        }
        b.labels.push_back(s.label);
        b.ids.push_back(s.id);
      }

      ForwardContext ctx{true, &branch_rng};
      ForwardOutput out = model.forward(pack(b.images), ctx);
      JointLoss jl = joint_loss(out, b.labels, bank, loss_cfg, negative_rng);
      if (!std::isfinite(jl.report.total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << " step " << step << "; batch ids:";
        for (const auto& id : b.ids) os << ' ' << id;
        throw TrainingError(os.str());
      }
      adam.zero_grad();
      backward(jl.total);
      adam.step();
      update_centers(bank, out.embedding.values(), b.labels, jl.report.negatives, cfg.loss);

      const std::size_t n_cls = out.logits.size(1);
      for (std::size_t i = 0; i < b.labels.size(); ++i) {
        if (argmax(out.logits.values().subspan(i * n_cls, n_cls)) == b.labels[i]) ++correct;
      }
      seen += b.labels.size();
      er.train_loss += jl.report.total;
      er.mean_d_pos += jl.report.mean_d_pos();
      er.mean_d_neg += jl.report.mean_d_neg();
      ++n_steps;

      nlohmann::json line = jl.report.to_json(step);
      line["epoch"] = epoch;
      line["lr"] = lr;
      if (hooks.step_log) *hooks.step_log << line.dump() << '\n';
      rec.steps.push_back(std::move(line));
      ++step;
    }
    er.train_loss /= static_cast<double>(n_steps);
    er.mean_d_pos /= static_cast<double>(n_steps);
    er.mean_d_neg /= static_cast<double>(n_steps);
    er.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);

    if (!split.validation.empty()) {
      EvalResult v = evaluate(model, dataset, split.validation, cfg.augmentation);
      er.val_accuracy = v.accuracy;
      er.val_loss = v.mean_loss;
      if (cfg.keep_best && v.accuracy > best_val) {
        best_val = v.accuracy;
        rec.best_epoch = epoch;
        rec.best_val_accuracy = v.accuracy;
        best_state.clear();
        for (auto& [name, t] : model.state()) best_state.emplace(name, t.clone());
        best_centers = bank.centers.clone();
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(er);
    rec.epochs.push_back(er);
  }

  if (cfg.keep_best && !best_state.empty()) {
    model.load_state(best_state);
    auto src = best_centers.values();
    std::copy(src.begin(), src.end(), bank.centers.mutable_values().begin());
  } else {
    rec.best_epoch = cfg.epochs - 1;
    if (!rec.epochs.empty()) rec.best_val_accuracy = rec.epochs.back().val_accuracy;
  }
  rec.final_train_accuracy = evaluate(model, dataset, split.train, cfg.augmentation).accuracy;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

nlohmann::json EvalResult::to_json(const std::vector<std::string>& classes) const {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t k = 0; k < per_class_accuracy.size(); ++k) {
    const std::string name = k < classes.size() ? classes[k] : std::to_string(k);
    per[name] = {{"accuracy", finite_or_null(per_class_accuracy[k])},
                 {"count", per_class_count[k]}};
  }
  return {{"accuracy", accuracy},     {"mean_loss", mean_loss},
          {"count", count},           {"per_class", per},
          {"confusion", confusion},   {"misclassified", misclassified}};
}

std::string EvalResult::per_class_csv(const std::vector<std::string>& classes) const {
  std::ostringstream os;
  os << "class,count,accuracy\n";
  for (std::size_t k = 0; k < per_class_accuracy.size(); ++k) {
    os << (k < classes.size() ? classes[k] : std::to_string(k)) << ',' << per_class_count[k]
       << ',';
    if (std::isfinite(per_class_accuracy[k])) os << per_class_accuracy[k];
    os << '\n';
  }
  return os.str();
}

EvalResult evaluate(Network& model, const Dataset& dataset, std::span<const std::size_t> indices,
                    const AugmentConfig& view, std::size_t batch) {
  if (indices.empty()) throw ContractError("nothing to evaluate");
  if (batch < 1) throw ContractError("batch must be at least 1");
  const std::size_t k = model.config().num_classes;
  if (dataset.classes.size() != k) {
    throw ContractError("model has " + std::to_string(k) + " classes, dataset has " +
                        std::to_string(dataset.classes.size()));
  }
  NoGradGuard no_grad;
  EvalResult r;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  r.per_class_count.assign(k, 0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::size_t end = std::min(indices.size(), start + batch);
    std::vector<Raster> images;
    std::vector<std::size_t> labels;
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = dataset.samples.at(indices[i]);
      images.push_back(eval_view(s.image, view));
      labels.push_back(s.label);
    }
    ForwardContext ctx{false, nullptr};
    ForwardOutput out = model.forward(pack(images), ctx);
    r.mean_loss += softmax_cross_entropy(out.logits, labels).item() *
                   static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t pred = argmax(out.logits.values().subspan(i * k, k));
      ++r.confusion[labels[i]][pred];
      ++r.per_class_count[labels[i]];
      if (pred == labels[i]) ++correct;
      else r.misclassified.push_back(dataset.samples[indices[start + i]].id);
    }
  }
  r.count = indices.size();
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  r.mean_loss /= static_cast<double>(r.count);
  r.per_class_accuracy.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    r.per_class_accuracy[c] = r.per_class_count[c] == 0
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : static_cast<double>(r.confusion[c][c]) /
                                        static_cast<double>(r.per_class_count[c]);
  }
  return r;
}

std::vector<double> extract_embeddings(Network& model, const Dataset& dataset,
                                       std::span<const std::size_t> indices,
                                       const AugmentConfig& view, std::size_t batch) {
  if (batch < 1) throw ContractError("batch must be at least 1");
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(indices.size() * model.config().embedding_dim());
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::size_t end = std::min(indices.size(), start + batch);
    std::vector<Raster> images;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(eval_view(dataset.samples.at(indices[i]).image, view));
    }
    ForwardContext ctx{false, nullptr};
    ForwardOutput f = model.forward(pack(images), ctx);
    out.insert(out.end(), f.embedding.values().begin(), f.embedding.values().end());
  }
  return out;
}

void save_model(const std::filesystem::path& path, Network& model, const CenterBank& bank,
                const std::vector<std::string>& classes, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.header = {{"network", model.config().to_json()},
               {"classes", classes},
               {"train_config", cfg.to_json()},
               {"margin", bank.margin},
               {"center_lr", bank.eta}};
  ck.tensors = model.state();
  ck.tensors.emplace("centers", bank.centers);
  save_checkpoint(path, ck);
}

TrainedModel load_model(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  TrainedModel m;
  try {
    m.network = std::make_unique<Network>(NetworkConfig::from_json(ck.header.at("network")));
    m.classes = ck.header.at("classes").get<std::vector<std::string>>();
    m.train_config = ck.header.value("train_config", nlohmann::json::object());
    m.bank.margin = ck.header.at("margin").get<double>();
    m.bank.eta = ck.header.at("center_lr").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint header: " + std::string(e.what()));
  }
  auto it = ck.tensors.find("centers");
  if (it == ck.tensors.end()) throw LoadError("checkpoint has no center bank");
  m.bank.centers = it->second;
  ck.tensors.erase(it);
  m.network->load_state(ck.tensors);
  if (m.classes.size() != m.network->config().num_classes) {
    throw LoadError("checkpoint class list does not match its network");
  }
  return m;
}

void check_registry(const TrainedModel& model, const Dataset& dataset) {
  if (model.classes != dataset.classes) {
    throw ContractError("dataset class registry does not match the checkpoint's (" +
                        std::to_string(dataset.classes.size()) + " vs " +
                        std::to_string(model.classes.size()) + " classes)");
  }
}

Experiment run_experiment(const Dataset& dataset, const TrainConfig& cfg,
                          const TrainHooks& hooks) {
  cfg.validate();
  FoldPlan plan = make_folds(dataset, cfg.seed, cfg.folds, cfg.validation_fraction);
  Experiment ex;
  ex.split = split_from_plan(dataset, plan, cfg.fold);
  NetworkConfig ncfg = cfg.network_config(dataset.classes.size());
  ex.network = std::make_unique<Network>(ncfg);
  ex.network->init(mix_seed({cfg.seed, 0x696e6974ULL}));
  ex.bank = CenterBank::gaussian(dataset.classes.size(), ncfg.embedding_dim(), cfg.margin,
                                 cfg.center_lr, mix_seed({cfg.seed, 0x63656e74ULL}),
                                 cfg.center_init_std);
  ex.record = train(*ex.network, ex.bank, dataset, ex.split, cfg, hooks);
  ex.record.test_accuracy =
      evaluate(*ex.network, dataset, ex.split.test, cfg.augmentation).accuracy;
  return ex;
}

std::string SweepResult::csv() const {
  std::ostringstream os;
  os << param << ",val_accuracy,test_accuracy,train_accuracy,in_stable_band\n";
  for (const auto& r : rows) {
    os << r.value << ',' << r.val_accuracy << ',' << r.test_accuracy << ',' << r.train_accuracy
       << ',' << (r.in_stable_band ? 1 : 0) << '\n';
  }
  return os.str();
}

SweepResult sweep(const Dataset& dataset, const TrainConfig& base, const std::string& param,
                  const std::vector<double>& values,
                  const std::function<void(const SweepRow&)>& progress) {
  if (values.empty()) throw ContractError("sweep needs at least one value");
  std::string key;
  if (param == "beta") key = "beta";
  else if (param == "m" || param == "margin") key = "margin";
  else if (param == "alpha") key = "alpha";
  else throw ContractError("cannot sweep '" + param + "' (expected beta, m or alpha)");

  SweepResult res;
  res.param = param;
  if (key == "margin") {
    res.has_band = true;
    res.band_lo = 2.5;
    res.band_hi = 5.5;
  }
  double best = -1.0, band_min = 2.0, band_max = -1.0;
  for (double v : values) {
    TrainConfig cfg = base;
    if (key == "beta") cfg.beta = v;
    else if (key == "margin") cfg.margin = v;
    else cfg.alpha = v;
    Experiment ex = run_experiment(dataset, cfg);
    SweepRow row;
    row.value = v;
    row.val_accuracy = ex.record.best_val_accuracy;
    row.test_accuracy = ex.record.test_accuracy;
    row.train_accuracy = ex.record.final_train_accuracy;
    row.fingerprint = ex.record.fingerprint();
    row.in_stable_band = res.has_band && v >= res.band_lo && v <= res.band_hi;
    if (row.in_stable_band) {
      band_min = std::min(band_min, row.test_accuracy);
      band_max = std::max(band_max, row.test_accuracy);
    }
    if (row.test_accuracy > best) {
      best = row.test_accuracy;
      res.best_value = v;
    }
    if (progress) progress(row);
    res.rows.push_back(row);
  }
  if (band_max >= 0.0) res.band_spread = band_max - band_min;
  return res;
}

AblationKind ablation_kind_from_string(const std::string& s) {
  if (s == "block") return AblationKind::block;
  if (s == "residual-level" || s == "residual") return AblationKind::residual_level;
  if (s == "loss") return AblationKind::loss;
  throw ContractError("unknown ablation '" + s + "' (expected block, residual-level or loss)");
}

std::vector<AblationRow> ablate(const Dataset& dataset, const TrainConfig& base,
                                AblationKind kind,
                                const std::function<void(const AblationRow&)>& progress) {
  std::vector<std::pair<std::string, TrainConfig>> variants;
  switch (kind) {
    case AblationKind::block: {
      TrainConfig basic = base, multi = base;
      basic.block = BlockKind::basic;
      multi.block = BlockKind::multi_scale;
      variants = {{"basic", basic}, {"multi_scale", multi}};
      break;
    }
    case AblationKind::residual_level: {
      TrainConfig inner = base, outer = base, both = base;
      inner.inner_skips = true;
      inner.outer_skip = false;
      outer.inner_skips = false;
      outer.outer_skip = true;
      both.inner_skips = both.outer_skip = true;
      variants = {{"inner_only", inner}, {"outer_only", outer}, {"both", both}};
      break;
    }
    case AblationKind::loss: {
      TrainConfig tcl = base, ctcl = base;
      tcl.loss = MetricKind::tcl;
      tcl.margin = 5.0;
      tcl.negatives = "auto";
      ctcl.loss = MetricKind::ctcl;
      ctcl.margin = 4.5;
      ctcl.negatives = "auto";
      variants = {{"tcl", tcl}, {"ctcl", ctcl}};
      break;
    }
  }
  std::vector<AblationRow> rows;
  for (auto& [name, cfg] : variants) {
    Experiment ex = run_experiment(dataset, cfg);
    AblationRow row{name, cfg, ex.record.test_accuracy, 0.0, ex.record.fingerprint()};
    row.delta = rows.empty() ? 0.0 : row.test_accuracy - rows.front().test_accuracy;
    if (progress) progress(row);
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,test_accuracy,delta\n";
  for (const auto& r : rows) os << r.variant << ',' << r.test_accuracy << ',' << r.delta << '\n';
  return os.str();
}

}  // namespace hrsketch
