// hrsketch command line: training, evaluation and the analysis tools.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hrsketch/analysis.hpp"
#include "hrsketch/config.hpp"
#include "hrsketch/errors.hpp"
#include "hrsketch/harness.hpp"
#include "hrsketch/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace hrsketch;

namespace {

// Where samples come from: an image tree or the synthetic generator.
struct DataArgs {
  std::string root;
  std::size_t synthetic_classes = 0;
  std::size_t synthetic_per_class = 100;
  std::uint64_t synthetic_seed = 7;

  void add(CLI::App* app) {
    app->add_option("--data", root, "image tree root/<class>/<image>");
    app->add_option("--synthetic", synthetic_classes, "generate N synthetic sketch classes");
    app->add_option("--per-class", synthetic_per_class, "synthetic samples per class");
    app->add_option("--data-seed", synthetic_seed, "synthetic generator seed");
  }

  Dataset load(std::size_t side) const {
    if (!root.empty()) {
      Dataset ds = load_dataset(root, side);
      if (ds.skipped > 0) std::cerr << "skipped " << ds.skipped << " unreadable files\n";
      return ds;
    }
    if (synthetic_classes > 0) {
      return generate_synthetic_sketches(synthetic_classes, synthetic_per_class, side,
                                         synthetic_seed);
    }
    throw ContractError("no data: pass --data DIR or --synthetic N");
  }
};

// TrainConfig keys exposed as --key flags, plus --config and --set.
struct ConfigArgs {
  std::string file;
  std::string preset;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void add(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    app->add_option("--preset", preset, "full or desk");
    app->add_option("--set", sets, "key=value override (repeatable)");
    for (const auto& key : TrainConfig::keys()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      app->add_option_function<std::string>(
          flag, [this, key](const std::string& v) { flags[key] = v; }, "config: " + key);
    }
  }

  TrainConfig resolve() const {
    std::map<std::string, std::string> overrides = flags;
    for (const auto& kv : sets) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw ContractError("--set expects key=value, got " + kv);
      overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    TrainConfig base = preset == "desk" ? TrainConfig::desk() : TrainConfig{};
    if (!preset.empty() && preset != "desk" && preset != "full") {
      throw ContractError("preset must be full or desk");
    }
    std::map<std::string, std::string> from_file;
    if (!file.empty()) from_file = read_key_values(file);
    return resolve_config(base, from_file, overrides);
  }
};

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ContractError("bad value '" + tok + "' in list");
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw LoadError("cannot write " + path.string());
  os << text;
}

int cmd_train(const DataArgs& data, const ConfigArgs& conf, const std::string& out_dir) {
  TrainConfig cfg = conf.resolve();
  Dataset ds = data.load(cfg.image_side);
  fs::create_directories(out_dir);
  FoldPlan plan = make_folds(ds, cfg.seed, cfg.folds, cfg.validation_fraction);
  write_text(fs::path(out_dir) / "folds.json", plan.to_json().dump(2));
  std::ofstream steps(fs::path(out_dir) / "steps.jsonl");
  TrainHooks hooks;
  hooks.step_log = &steps;
  hooks.on_epoch = [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.train_loss
              << " train_acc " << e.train_accuracy << " val_acc " << e.val_accuracy << "\n";
  };
  Experiment ex = run_experiment(ds, cfg, hooks);
  save_model(fs::path(out_dir) / "model.ckpt", *ex.network, ex.bank, ds.classes, cfg);
  write_text(fs::path(out_dir) / "run.json", ex.record.to_json().dump(2));
  std::cout << "train_accuracy " << ex.record.final_train_accuracy << "\n"
            << "test_accuracy " << ex.record.test_accuracy << "\n"
            << "fingerprint " << std::hex << ex.record.fingerprint() << std::dec << "\n";
  return 0;
}

int cmd_eval(const DataArgs& data, const std::string& ckpt, const std::string& out_dir,
             bool all) {
  TrainedModel m = load_model(ckpt);
  TrainConfig cfg;
  for (auto& [k, v] : m.train_config.items()) {
    cfg.set(k, v.is_string() ? v.get<std::string>() : v.dump());
  }
  Dataset ds = data.load(cfg.image_side);
  check_registry(m, ds);
  std::vector<std::size_t> idx;
  if (all) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) idx.push_back(i);
  } else {
    FoldPlan plan = make_folds(ds, cfg.seed, cfg.folds, cfg.validation_fraction);
    idx = split_from_plan(ds, plan, cfg.fold).test;
  }
  EvalResult r = evaluate(*m.network, ds, idx, cfg.augmentation);
  std::cout << "accuracy " << r.accuracy << " (" << r.count << " samples)\n";
  if (!out_dir.empty()) {
    write_text(fs::path(out_dir) / "eval.json", r.to_json(ds.classes).dump(2));
    write_text(fs::path(out_dir) / "per_class.csv", r.per_class_csv(ds.classes));
    std::string mis;
    for (const auto& id : r.misclassified) mis += id + "\n";
    write_text(fs::path(out_dir) / "misclassified.txt", mis);
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol) {
  bool ok = true;
  for (const auto& c : operator_gradchecks(seed)) {
    const bool pass = c.result.max_rel_error <= tol;
    ok = ok && pass;
    std::cout << std::left << std::setw(36) << c.name << std::scientific << std::setprecision(3)
              << c.result.max_rel_error << (pass ? "  ok" : "  FAIL") << "\n";
  }
  const double agree = ctcl_feature_agreement(100, seed);
  const double cosine = center_rule_min_cosine(100, seed);
  std::cout << std::left << std::setw(36) << "ctcl feature step (x2/eta)" << agree << "\n"
            << std::setw(36) << "center step min cosine" << std::fixed << std::setprecision(12)
            << cosine << "\n";
  ok = ok && agree <= 1e-10 && cosine >= 1.0 - 1e-10;
  return ok ? 0 : 1;
}

int cmd_params(const ConfigArgs& conf, std::size_t classes, bool trace) {
  TrainConfig cfg = conf.resolve();
  NetworkConfig ncfg = cfg.network_config(classes);
  Network net(ncfg);
  NetworkConfig basic_cfg = ncfg;
  basic_cfg.block_kind = BlockKind::basic;
  Network basic(basic_cfg);
  const double ratio = static_cast<double>(net.stage_conv_weight_count()) /
                       static_cast<double>(basic.stage_conv_weight_count());
  std::cout << "parameters " << net.count_parameters() << "\n"
            << "stage_conv_weights " << net.stage_conv_weight_count() << "\n"
            << "basic_stage_conv_weights " << basic.stage_conv_weight_count() << "\n"
            << "stage_conv_ratio " << ratio << "\n"
            << "expected_active " << expected_active_params(
                   static_cast<double>(basic.stage_conv_weight_count()), ncfg.alpha)
            << "\n";
  if (trace) {
    net.init(cfg.seed);
    ShapeTrace t;
    ForwardContext ctx{false, nullptr};
    NoGradGuard no_grad;
    net.forward(Tensor(Shape{1, ncfg.input_channels, ncfg.input_side, ncfg.input_side}, 1.0),
                ctx, &t);
    for (const auto& [name, shape] : t) std::cout << name << " " << shape_str(shape) << "\n";
  }
  return 0;
}

struct SimArgs {
  CenterSimConfig cfg;
  std::string loss = "ctcl";
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--loss", loss, "tcl or ctcl");
    app->add_option("--margin", cfg.margin);
    app->add_option("--center-lr", cfg.center_lr);
    app->add_option("--embed-lr", cfg.embed_lr);
    app->add_option("--steps", cfg.steps);
    app->add_option("--batch", cfg.batch);
    app->add_option("--seed", cfg.seed);
    app->add_option("--classes", cfg.cloud.n_classes);
    app->add_option("--dim", cfg.cloud.dim);
    app->add_option("--cloud-per-class", cfg.cloud.per_class);
    app->add_option("--spread", cfg.cloud.spread);
    app->add_option("--mean-scale", cfg.cloud.mean_scale);
    app->add_option("--signal-dims", cfg.cloud.signal_dims);
    app->add_option("--nuisance-spread", cfg.cloud.nuisance_spread);
    app->add_option("--cloud-seed", cfg.cloud.seed);
    app->add_option("--out", out, "output directory");
  }

  CenterSimConfig resolved() const {
    CenterSimConfig c = cfg;
    c.kind = metric_kind_from_string(loss);
    return c;
  }
};

int cmd_centersim(const SimArgs& args) {
  CenterSimResult r = run_center_sim(args.resolved());
  std::cout << "mean_d_pos " << r.mean_d_pos << "\nmean_d_neg " << r.mean_d_neg << "\nratio "
            << r.ratio() << "\n";
  if (!args.out.empty()) {
    std::ostringstream trace;
    trace << "step,loss,mean_d_pos,mean_d_neg,active_fraction\n";
    for (const auto& s : r.trace) {
      trace << s.step << ',' << s.loss << ',' << s.mean_d_pos << ',' << s.mean_d_neg << ','
            << s.active_fraction << '\n';
    }
    write_text(fs::path(args.out) / "trace.csv", trace.str());
    PcaProjection p = pca_project(r.embedded, r.labels.size(), r.bank.dim());
    std::ostringstream pca;
    pca << "label,pc1,pc2\n";
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
      pca << r.labels[i] << ',' << p.coords[2 * i] << ',' << p.coords[2 * i + 1] << '\n';
    }
    write_text(fs::path(args.out) / "pca.csv", pca.str());
  }
  return 0;
}

int cmd_distances(const DataArgs& data, const std::string& ckpt, const SimArgs& sim,
                  std::size_t n_show, const std::string& out) {
  DistanceReport rep;
  Rng rng(mix_seed({sim.cfg.seed, 0x64697374ULL}));
  if (!ckpt.empty()) {
    TrainedModel m = load_model(ckpt);
    TrainConfig cfg;
    for (auto& [k, v] : m.train_config.items()) {
      cfg.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    }
    Dataset ds = data.load(cfg.image_side);
    check_registry(m, ds);
    std::vector<std::size_t> idx(ds.samples.size()), labels;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = i;
      labels.push_back(ds.samples[i].label);
    }
    auto feats = extract_embeddings(*m.network, ds, idx, cfg.augmentation);
    rep = distance_report(feats, labels, m.bank, n_show, rng);
  } else {
    CenterSimResult r = run_center_sim(sim.resolved());
    rep = distance_report(r.embedded, r.labels, r.bank, n_show, rng);
  }
  if (out.empty()) std::cout << rep.csv();
  else write_text(out, rep.csv());
  std::cout << rep.summary().dump(2) << "\n";
  return 0;
}

int cmd_sweep(const DataArgs& data, const ConfigArgs& conf, const std::string& param,
              const std::string& values, const std::string& out) {
  TrainConfig cfg = conf.resolve();
  Dataset ds = data.load(cfg.image_side);
  SweepResult r = sweep(ds, cfg, param, parse_values(values), [&](const SweepRow& row) {
    std::cout << param << "=" << row.value << " test_acc " << row.test_accuracy << "\n";
  });
  if (!out.empty()) write_text(out, r.csv());
  std::cout << r.csv() << "best " << param << " = " << r.best_value << "\n";
  if (r.has_band) {
    std::cout << "stable band [" << r.band_lo << ", " << r.band_hi << "] spread "
              << r.band_spread << "\n";
  }
  return 0;
}

int cmd_ablate(const DataArgs& data, const ConfigArgs& conf, const std::string& kind,
               const std::string& out) {
  TrainConfig cfg = conf.resolve();
  Dataset ds = data.load(cfg.image_side);
  auto rows = ablate(ds, cfg, ablation_kind_from_string(kind), [](const AblationRow& r) {
    std::cout << r.variant << " test_acc " << r.test_accuracy << "\n";
  });
  if (!out.empty()) write_text(out, ablation_csv(rows));
  std::cout << ablation_csv(rows);
  return 0;
}

int cmd_augment_preview(const DataArgs& data, const ConfigArgs& conf, std::size_t count,
                        std::size_t sample, const std::string& out) {
  TrainConfig cfg = conf.resolve();
  Dataset ds = data.load(cfg.image_side);
  if (sample >= ds.samples.size()) throw IndexError("sample index out of range");
  const auto& s = ds.samples[sample];
  fs::create_directories(out);
  write_png(s.image, fs::path(out) / "original.png");
  Rng rng(mix_seed({cfg.seed, sample}));
  for (std::size_t i = 0; i < count; ++i) {
    AugmentParams p = draw_augmentation(cfg.augmentation, rng);
    std::ostringstream name;
    name << "aug_" << i << "_r" << p.rotation_deg << (p.flip ? "_f" : "") << "_x" << p.shift_x
         << "_y" << p.shift_y << ".png";
    write_png(apply_augmentation(s.image, p, cfg.augmentation), fs::path(out) / name.str());
  }
  std::cout << "wrote " << count << " variants of " << s.id << " to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical residual sketch recognition toolkit"};
  app.require_subcommand(1);

  DataArgs data;
  ConfigArgs conf;
  SimArgs sim;
  std::string out_dir = "run", ckpt, param, values, kind, out;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  std::size_t classes = 250, n_show = 20, count = 8, sample = 0;
  bool all = false, trace = false;

  auto* train = app.add_subcommand("train", "train on one fold and evaluate the held-out fold");
  data.add(train);
  conf.add(train);
  train->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  data.add(eval);
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--out", out, "directory for eval.json / per_class.csv");
  eval->add_flag("--all", all, "evaluate every sample instead of the test fold");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of all operators");
  grad->add_option("--seed", seed);
  grad->add_option("--tol", tol);

  auto* params = app.add_subcommand("params", "parameter accounting and shape trace");
  conf.add(params);
  params->add_option("--classes", classes);
  params->add_flag("--trace", trace, "print intermediate shapes");

  auto* csim = app.add_subcommand("centersim", "metric-loss dynamics on a feature cloud");
  sim.add(csim);

  auto* dist = app.add_subcommand("distances", "per-sample center distances");
  data.add(dist);
  SimArgs dist_sim;
  dist_sim.add(dist);
  dist->add_option("--checkpoint", ckpt, "trained model (otherwise a feature-cloud run)");
  dist->add_option("--n-show", n_show);
  dist->add_option("--csv", out);

  auto* sw = app.add_subcommand("sweep", "one run per value of beta, m or alpha");
  data.add(sw);
  conf.add(sw);
  sw->add_option("--param", param)->required();
  sw->add_option("--values", values, "comma-separated")->required();
  sw->add_option("--csv", out);

  auto* ab = app.add_subcommand("ablate", "block, residual-level or loss ablation");
  data.add(ab);
  conf.add(ab);
  ab->add_option("--kind", kind)->required();
  ab->add_option("--csv", out);

  auto* prev = app.add_subcommand("augment-preview", "write augmented variants as PNG");
  data.add(prev);
  conf.add(prev);
  prev->add_option("--count", count);
  prev->add_option("--sample", sample);
  prev->add_option("--out", out_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(data, conf, out_dir);
    if (*eval) return cmd_eval(data, ckpt, out, all);
    if (*grad) return cmd_gradcheck(seed, tol);
    if (*params) return cmd_params(conf, classes, trace);
    if (*csim) return cmd_centersim(sim);
    if (*dist) return cmd_distances(data, ckpt, dist_sim, n_show, out);
    if (*sw) return cmd_sweep(data, conf, param, values, out);
    if (*ab) return cmd_ablate(data, conf, kind, out);
    if (*prev) return cmd_augment_preview(data, conf, count, sample, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
