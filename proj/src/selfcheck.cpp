#include "hrsketch/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "hrsketch/blocks.hpp"
#include "hrsketch/losses.hpp"
#include "hrsketch/network.hpp"
#include "hrsketch/ops.hpp"

namespace hrsketch {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0, grad);
  for (double& v : t.mutable_values()) v = uniform(rng, lo, hi);
  return t;
}

// Weighted sum so the upstream gradient is not uniform.
Tensor probe_loss(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

}  // namespace

std::vector<OperatorCheck> operator_gradchecks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<OperatorCheck> out;
  auto check = [&](const std::string& name, const std::function<Tensor()>& fn, Tensor param,
                   std::size_t probes = 0) {
    out.push_back({name, check_gradient(fn, param, 1e-5, probes, &rng)});
  };

  {
    Tensor x = random_tensor({2, 3, 7, 7}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor up = random_tensor({2, 4, 4, 4}, rng, false);
    auto fn = [&] { return probe_loss(conv2d(x, w, b, 2, 1), up); };
    check("conv2d.input", fn, x);
    check("conv2d.weight", fn, w);
    check("conv2d.bias", fn, b);
    Tensor w1 = random_tensor({5, 3, 1, 1}, rng);
    Tensor up1 = random_tensor({2, 5, 7, 7}, rng, false);
    auto fn1 = [&] { return probe_loss(conv2d(x, w1, 1, 0), up1); };
    check("conv2d_1x1.input", fn1, x);
    check("conv2d_1x1.weight", fn1, w1);
  }
  {
    Tensor x = random_tensor({2, 2, 8, 8}, rng);
    Tensor up = random_tensor({2, 2, 4, 4}, rng, false);
    check("max_pool2d", [&] { return probe_loss(max_pool2d(x, 3, 2, 1), up); }, x);
    Tensor up2 = random_tensor({2, 2, 2, 2}, rng, false);
    check("avg_pool2d", [&] { return probe_loss(avg_pool2d(x, 4, 4), up2); }, x);
  }
  {
    Tensor x = random_tensor({3, 2, 4, 4}, rng);
    Tensor g = random_tensor({2}, rng, true, 0.5, 1.5);
    Tensor b = random_tensor({2}, rng);
    Tensor up = random_tensor({3, 2, 4, 4}, rng, false);
    auto fn = [&] {
      BatchNormState st;
      st.running_mean = Tensor(Shape{2}, 0.0);
      st.running_var = Tensor(Shape{2}, 1.0);
      return probe_loss(batch_norm(x, g, b, st, true), up);
    };
    check("batch_norm.input", fn, x);
    check("batch_norm.gamma", fn, g);
    check("batch_norm.beta", fn, b);
  }
  {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor up = random_tensor({3, 4}, rng, false);
    check("relu", [&] { return probe_loss(relu(a), up); }, a);
    check("add", [&] { return probe_loss(add(a, b), up); }, b);
    check("sub", [&] { return probe_loss(sub(a, b), up); }, b);
    check("mul", [&] { return probe_loss(mul(a, b), up); }, a);
    check("scale", [&] { return probe_loss(scale(a, -1.7), up); }, a);
    check("square", [&] { return probe_loss(square(a), up); }, a);
    Tensor up3 = random_tensor({3}, rng, false);
    check("sum_last", [&] { return probe_loss(sum_last(a), up3); }, a);
    check("mean", [&] { return mean(square(a)); }, a);
    Tensor m = random_tensor({4, 5}, rng);
    Tensor upm = random_tensor({3, 5}, rng, false);
    check("matmul.lhs", [&] { return probe_loss(matmul(a, m), upm); }, a);
    check("matmul.rhs", [&] { return probe_loss(matmul(a, m), upm); }, m);
    std::vector<std::size_t> rows{2, 0, 2};
    check("gather_rows", [&] { return probe_loss(gather_rows(m, rows), upm); }, m);
    std::vector<std::size_t> labels{1, 3, 0};
    check("softmax_cross_entropy", [&] { return softmax_cross_entropy(a, labels); }, a);
  }
  {
    Tensor x = random_tensor({2, 4, 6, 6}, rng);
    Tensor up = random_tensor({2, 6, 3, 3}, rng, false);
    BasicBlock basic(4, 6, 2);
    Rng init_rng(mix_seed({seed, 1}));
    basic.init(init_rng);
    auto fb = [&] {
      ForwardContext ctx{true, nullptr};
      return probe_loss(basic.forward(x, ctx), up);
    };
    check("basic_block.input", fb, x);
    check("basic_block.conv1", fb, basic.conv1.conv.weight, 40);

    MultiScaleBlock ms(4, 6, 2, 0.75);
    ms.init(init_rng);
    auto fe = [&] {
      ForwardContext ctx{false, nullptr};
      return probe_loss(ms.forward(x, ctx), up);
    };
    check("multi_scale_block.eval.input", fe, x);
    for (std::uint64_t s : {3ULL, 4ULL}) {
      auto ft = [&, s] {
        Rng branch(s);  // same draw on every evaluation
        return probe_loss(ms.forward_train(x, branch), up);
      };
      check("multi_scale_block.train" + std::to_string(s) + ".input", ft, x);
    }
  }
  {
    NetworkConfig cfg = NetworkConfig::desk(3);
    cfg.stages = {{4, 1}, {4, 1}, {6, 1}, {6, 1}};
    Network net(cfg);
    net.init(mix_seed({seed, 2}));
    Tensor x = random_tensor({2, 1, cfg.input_side, cfg.input_side}, rng, true, 0.0, 1.0);
    std::vector<std::size_t> labels{0, 2};
    auto fn = [&] {
      Rng branch(7);
      ForwardContext ctx{true, &branch};
      return softmax_cross_entropy(net.forward(x, ctx).logits, labels);
    };
    check("network.stem", fn, net.stem.conv.weight, 30);
    check("network.head", fn, net.head.weight, 30);
    check("network.input", fn, x, 30);
  }
  return out;
}

double ctcl_feature_agreement(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  std::size_t done = 0;
  while (done < n) {
    const std::size_t d = 2 + uniform_index(rng, 15);
    const double m = uniform(rng, 1.0, 8.0);
    const double eta = uniform(rng, 0.05, 1.0);
    CenterBank bank = CenterBank::gaussian(2, d, m, eta, rng(), 1.0);
    Tensor x = random_tensor({1, d}, rng, true, -2.0, 2.0);
    std::vector<std::size_t> label{0}, neg{1};
    MetricLoss ml = ctcl_loss_with_negatives(x, label, bank, neg);
    if (!ml.report.active[0]) continue;
    backward(ml.loss);
    auto step = ctcl_feature_grad(x.values(), bank.center(0), bank.center(1), m, eta);
    for (std::size_t j = 0; j < d; ++j) {
      worst = std::max(worst, relative_error(x.grad()[j], 2.0 / eta * step[j], 1e-12));
    }
    ++done;
  }
  return worst;
}

double center_rule_min_cosine(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t k = 2 + uniform_index(rng, 6), d = 2 + uniform_index(rng, 10);
    const std::size_t batch = 1 + uniform_index(rng, 12);
    CenterBank bank = CenterBank::gaussian(k, d, uniform(rng, 1.0, 6.0),
                                           uniform(rng, 0.05, 1.0), rng(), 1.0);
    bank.centers.set_requires_grad(true);
    Tensor x = random_tensor({batch, d}, rng, false, -2.0, 2.0);
    std::vector<std::size_t> labels(batch);
    for (auto& y : labels) y = uniform_index(rng, k);
    MetricLoss ml = ctcl_loss(x, labels, bank, rng);
    backward(ml.loss);
    if (!bank.centers.has_grad()) continue;
    auto delta = center_deltas(bank, x.values(), labels, ml.report.negatives, MetricKind::ctcl);
    for (std::size_t c = 0; c < k; ++c) {
      double dot = 0.0, nd = 0.0, ng = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double a = delta[c * d + j], g = -bank.centers.grad()[c * d + j];
        dot += a * g;
        nd += a * a;
        ng += g * g;
      }
      if (nd == 0.0 && ng == 0.0) continue;  // class untouched by active samples
      worst = std::min(worst, dot / std::sqrt(nd * ng));
    }
  }
  return worst;
}

}  // namespace hrsketch
