// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "hrsketch/analysis.hpp"
#include "hrsketch/blocks.hpp"
#include "hrsketch/config.hpp"
#include "hrsketch/harness.hpp"
#include "hrsketch/network.hpp"
#include "hrsketch/optim.hpp"
#include "hrsketch/selfcheck.hpp"

using namespace hrsketch;

namespace {

// Tolerances and budgets.
constexpr double kFeatureGradTol = 1e-10;
constexpr double kOperatorGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 30.0;
constexpr double kCenterCosineTol = 1e-10;
constexpr double kParamTarget = 34e6;
constexpr double kParamBand = 0.10;
constexpr double kStageRatioTarget = 1.50;
constexpr double kStageRatioTol = 0.01;
constexpr double kMonteCarloTol = 0.01;
constexpr int kMonteCarloDraws = 10000;
constexpr double kTclRatioLo = 0.8, kTclRatioHi = 1.25;
constexpr double kContrastFactor = 0.5;
constexpr double kCenterSimBudgetSeconds = 120.0;
constexpr double kDeskTrainAcc = 0.90;
constexpr double kDeskHeldOutAcc = 0.70;
constexpr double kDeskBudgetSeconds = 600.0;
constexpr std::size_t kDeskPerClass = 100;
constexpr double kScheduleTol = 1e-12;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void info(const std::string& name, const std::string& detail) {
  std::printf("INFO  %-28s %s\n", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void copy_into(Tensor& dst, const Tensor& src) {
  auto s = src.values();
  std::copy(s.begin(), s.end(), dst.mutable_values().begin());
}

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const double feature = ctcl_feature_agreement(100, 0);
  auto checks = operator_gradchecks(0);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : checks) {
    if (c.result.max_rel_error > worst) {
      worst = c.result.max_rel_error;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  report(feature <= kFeatureGradTol && worst <= kOperatorGradTol && secs < kGradBudgetSeconds,
         "gradient-correctness",
         fmt("feature rel err %.2e (<= %.0e); %zu operator checks, worst %.2e in %s (<= %.0e); "
             "%.1f s (< %.0f s)",
             feature, kFeatureGradTol, checks.size(), worst, worst_name.c_str(),
             kOperatorGradTol, secs, kGradBudgetSeconds));
}

void center_rule() {
  const double cos = center_rule_min_cosine(100, 1);
  report(cos >= 1.0 - kCenterCosineTol, "center-rule-consistency",
         fmt("min cosine %.15f over 100 batches (>= 1 - %.0e)", cos, kCenterCosineTol));
}

void shape_conformance() {
  Network net(NetworkConfig::full());
  net.init(0);
  ShapeTrace trace;
  ForwardContext eval;
  net.forward(Tensor(Shape{1, 224, 224}, 1.0), eval, &trace);
  struct Want {
    const char* name;
    Shape shape;
  };
  const std::vector<Want> table{
      {"front_end.conv", {64, 112, 112}}, {"front_end.pool", {64, 56, 56}},
      {"inner1", {64, 56, 56}},           {"inner2", {128, 28, 28}},
      {"inner3", {256, 14, 14}},          {"inner4", {512, 7, 7}},
      {"branch1.pool", {250}},            {"branch2.pool", {512}},
      {"outer.projection", {512, 7, 7}},
  };
  std::size_t matched = 0;
  std::string bad;
  for (const auto& w : table) {
    bool found = false;
    for (const auto& [n, s] : trace) {
      if (n == w.name && s == w.shape) found = true;
    }
    if (found) ++matched;
    else bad += std::string(" ") + w.name;
  }
  report(matched == table.size(), "shape-conformance",
         fmt("%zu/%zu table outputs match (stem, pool, inner1-4, two head branches, "
             "outer projection)%s",
             matched, table.size(), bad.empty() ? "" : (" mismatched:" + bad).c_str()));
}

void parameter_accounting() {
  Network multi(NetworkConfig::full());
  NetworkConfig basic_cfg = NetworkConfig::full();
  basic_cfg.block_kind = BlockKind::basic;
  Network basic(basic_cfg);

  const double total = double(multi.count_parameters());
  report(std::abs(total - kParamTarget) <= kParamBand * kParamTarget, "parameter-count",
         fmt("%.0f trainable (34M +- 10%%: [%.1fM, %.1fM])", total,
             kParamTarget * (1 - kParamBand) / 1e6, kParamTarget * (1 + kParamBand) / 1e6));

  const double ms = double(multi.stage_conv_weight_count());
  const double bs = double(basic.stage_conv_weight_count());
  const double ratio = ms / bs;
  report(std::abs(ratio - kStageRatioTarget) <= kStageRatioTol, "stage-conv-ratio",
         fmt("multi-scale / basic stage conv weights = %.0f / %.0f = %.5f (target %.2f +- %.2f)",
             ms, bs, ratio, kStageRatioTarget, kStageRatioTol));
  // The four downsampling blocks have a one-conv branch of 9*Cin*Cout,
  // less than half the two-conv branch 9*(Cin*Cout + Cout^2).
  info("stage-conv-ratio", "equal-width (non-downsampling) blocks alone give exactly 1.5; "
                           "the four width-changing first blocks pull the total down");

  // Monte Carlo over branch draws on the first stage of the default network
  // (three 64-channel blocks), 1x1 spatial input.
  NoGradGuard guard;
  const std::size_t c = NetworkConfig::full().stages[0].channels;
  const std::size_t n_blocks = NetworkConfig::full().stages[0].blocks;
  for (double alpha : {0.25, 0.5, 0.75}) {
    std::vector<MultiScaleBlock> blocks;
    double n_p = 0.0;
    Rng rng(mix_seed({42, std::uint64_t(alpha * 100)}));
    for (std::size_t b = 0; b < n_blocks; ++b) {
      blocks.emplace_back(c, c, 1, alpha, BlockOptions{false, false});
      blocks.back().init(rng);
      n_p += double(BasicBlock(c, c, 1).conv_weight_count());
    }
    Tensor x(Shape{c, 1, 1}, 0.1);
    double acc = 0.0;
    for (int i = 0; i < kMonteCarloDraws; ++i) {
      Tensor h = x;
      double active = 0.0;
      for (auto& blk : blocks) {
        h = blk.forward_train(h, rng);
        active += double(blk.active_conv_weight_count());
      }
      acc += active;
    }
    const double mean = acc / kMonteCarloDraws;
    const double want = expected_active_params(n_p, alpha);
    report(std::abs(mean - want) <= kMonteCarloTol * want,
           fmt("active-params alpha=%.2f", alpha),
           fmt("mean active %.1f vs n_p(alpha+1)/2 = %.1f (n_p %.0f), rel err %.4f (<= %.2f), "
               "%d draws",
               mean, want, n_p, std::abs(mean - want) / want, kMonteCarloTol, kMonteCarloDraws));
  }
  {
    const double l = bs, r = ms - bs;
    for (double alpha : {0.25, 0.5, 0.75}) {
      const double exact = alpha * l + (1 - alpha) * r;
      const double formula = expected_active_params(bs, alpha);
      info(fmt("active-params trunk a=%.2f", alpha),
           fmt("whole default trunk: exact expectation %.0f vs n_p(alpha+1)/2 = %.0f (%.2f%% apart)",
               exact, formula, 100.0 * std::abs(exact - formula) / formula));
    }
  }
}

void block_equivalence() {
  bool all = true;
  for (std::size_t stride : {1, 2}) {
    const std::size_t in = stride == 1 ? 64 : 32;
    BasicBlock basic(in, 64, stride);
    MultiScaleBlock ms(in, 64, stride, 1.0);
    Rng rng(7);
    basic.init(rng);
    ms.init(rng);
    copy_into(ms.left1.conv.weight, basic.conv1.conv.weight);
    copy_into(ms.left2.conv.weight, basic.conv2.conv.weight);
    if (basic.projection) copy_into(ms.projection->conv.weight, basic.projection->conv.weight);
    Tensor x(Shape{2, in, 14, 14});
    for (double& v : x.mutable_values()) v = uniform(rng, -1.0, 1.0);
    ForwardContext eval;
    const Tensor a = basic.forward(x, eval);
    const Tensor b = ms.forward(x, eval);
    all &= std::ranges::equal(a.values(), b.values());
  }
  report(all, "block-equivalence",
         "alpha=1 eval output bit-identical to the basic block (stride 1 and stride 2)");
}

void compression_and_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  CenterSimConfig tcl;
  tcl.kind = MetricKind::tcl;
  tcl.margin = 5.0;
  CenterSimConfig ctcl;
  ctcl.kind = MetricKind::ctcl;
  ctcl.margin = 4.5;
  const auto rt = run_center_sim(tcl);
  const auto rc = run_center_sim(ctcl);
  const double secs = seconds_since(t0);
  const bool ok = rt.ratio() >= kTclRatioLo && rt.ratio() <= kTclRatioHi &&
                  rc.ratio() < kContrastFactor * rt.ratio() && secs < kCenterSimBudgetSeconds;
  report(ok, "compression-contrast",
         fmt("%zu-class %zu-d cloud, %zu steps: TCL(m=5) ratio %.3f in [%.2f, %.2f]; "
             "CTCL(m=4.5) ratio %.3f < %.3f; %.1f s (< %.0f s)",
             tcl.cloud.n_classes, tcl.cloud.dim, tcl.steps, rt.ratio(), kTclRatioLo, kTclRatioHi,
             rc.ratio(), kContrastFactor * rt.ratio(), secs, kCenterSimBudgetSeconds));

  std::vector<double> pos, neg;
  for (double m : {5.0, 50.0, 300.0}) {
    CenterSimConfig c;
    c.kind = MetricKind::tcl;
    c.margin = m;
    auto r = run_center_sim(c);
    pos.push_back(r.mean_d_pos);
    neg.push_back(r.mean_d_neg);
  }
  const bool up = pos[0] < pos[1] && pos[1] < pos[2] && neg[0] < neg[1] && neg[1] < neg[2];
  report(up, "m-trend",
         fmt("TCL m=5/50/300: D_pos %.1f/%.1f/%.1f, D_neg %.1f/%.1f/%.1f", pos[0], pos[1], pos[2],
             neg[0], neg[1], neg[2]));
}

void desk_learnability() {
  const Dataset ds = generate_synthetic_sketches(8, kDeskPerClass, 72, 0);
  TrainConfig cfg = TrainConfig::desk();
  cfg.lambda = 0.024;
  cfg.margin = 4.5;
  cfg.beta = 0.7;

  const auto t0 = std::chrono::steady_clock::now();
  Experiment joint = run_experiment(ds, cfg);
  const double secs = seconds_since(t0);
  const double train_acc = joint.record.final_train_accuracy;
  const double test_acc = joint.record.test_accuracy;
  report(train_acc >= kDeskTrainAcc && test_acc >= kDeskHeldOutAcc && secs <= kDeskBudgetSeconds,
         "desk-learnability",
         fmt("8 classes x %zu, %zu epochs: train %.3f (>= %.2f), held-out %.3f (>= %.2f), "
             "%.0f s (<= %.0f s)",
             kDeskPerClass, cfg.epochs, train_acc, kDeskTrainAcc, test_acc, kDeskHeldOutAcc, secs,
             kDeskBudgetSeconds));

  TrainConfig control_cfg = cfg;
  control_cfg.lambda = 0.0;
  Experiment control = run_experiment(ds, control_cfg);

  auto geometry = [&](Experiment& ex) {
    auto f = extract_embeddings(*ex.network, ds, ex.split.train, cfg.augmentation);
    std::vector<std::size_t> y;
    for (auto i : ex.split.train) y.push_back(ds.samples[i].label);
    return embedding_geometry(f, y, ds.classes.size());
  };
  const auto gj = geometry(joint);
  const auto gc = geometry(control);
  report(gc.ratio() > gj.ratio(), "lambda-control-geometry",
         fmt("D_pos/D_neg on train embeddings: lambda=0 %.4f > lambda=0.024 %.4f "
             "(control train %.3f, held-out %.3f)",
             gc.ratio(), gj.ratio(), control.record.final_train_accuracy,
             control.record.test_accuracy));
}

void determinism() {
  const Dataset ds = generate_synthetic_sketches(8, 12, 72, 3);
  TrainConfig cfg = TrainConfig::desk();
  cfg.epochs = 2;
  const auto a = run_experiment(ds, cfg).record.fingerprint();
  const auto b = run_experiment(ds, cfg).record.fingerprint();
  report(a == b, "determinism",
         fmt("two runs, same seed/config: fingerprints %016llx / %016llx",
             (unsigned long long)a, (unsigned long long)b));
}

void schedule() {
  auto rel = [](double got, double want) { return std::abs(got - want) / std::abs(want); };
  const double e0 = rel(lr_at(0), 0.001);
  const double e10 = rel(lr_at(10), 6.5e-4);
  const double e100 = rel(lr_at(100), 0.001 * std::pow(0.65, 10));
  report(e0 <= kScheduleTol && e10 <= kScheduleTol && e100 <= kScheduleTol, "schedule",
         fmt("lr_at(0)=%.6g lr_at(10)=%.6g lr_at(100)=%.6g; max rel err %.1e (<= %.0e)",
             lr_at(0), lr_at(10), lr_at(100), std::max({e0, e10, e100}), kScheduleTol));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> steps{
      gradient_correctness, center_rule,           shape_conformance, parameter_accounting,
      block_equivalence,    compression_and_trend, desk_learnability, determinism,
      schedule,
  };
  for (const auto& s : steps) {
    try {
      s();
    } catch (const std::exception& e) {
      report(false, "exception", e.what());
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
