#include <doctest.h>

#include <cmath>
#include <set>

#include "hrsketch/data.hpp"
#include "hrsketch/errors.hpp"
#include "hrsketch/losses.hpp"
#include "hrsketch/ops.hpp"
#include "test_util.hpp"

using namespace hrsketch;
using testutil::random_tensor;

namespace {

CenterBank bank_of(std::vector<double> centers, std::size_t d, double m, double eta) {
  CenterBank b;
  const std::size_t k = centers.size() / d;
  b.centers = Tensor(Shape{k, d}, std::move(centers));
  b.margin = m;
  b.eta = eta;
  return b;
}

}  // namespace

TEST_CASE("plain triplet-center loss examples") {
  // c0 = (0,0) positive, c1 = (3,0), c2 = (0,2)
  auto bank = bank_of({0, 0, 3, 0, 0, 2}, 2, 5.0, 0.5);
  std::vector<std::size_t> y{0};
  auto r = tcl_loss(Tensor(Shape{1, 2}, {1.0, 0.0}), y, bank);
  CHECK(r.loss.item() == doctest::Approx(2.0));
  CHECK(r.report.negatives[0] == 1);
  CHECK(r.report.d_neg[0] == 4.0);

  auto far = bank_of({0, 0, 30, 0}, 2, 5.0, 0.5);
  CHECK(tcl_loss(Tensor(Shape{1, 2}, {0.0, 0.0}), y, far).loss.item() == 0.0);

  auto edge = bank_of({0, 0, 2, 0}, 2, 0.0, 0.5);
  CHECK(tcl_loss(Tensor(Shape{1, 2}, {1.0, 0.0}), y, edge).loss.item() == 0.0);

  auto lonely = bank_of({0, 0}, 2, 5.0, 0.5);
  CHECK_THROWS_AS(tcl_loss(Tensor(Shape{1, 2}, {1.0, 0.0}), y, lonely), ContractError);
}

TEST_CASE("compact triplet-center loss examples") {
  auto bank = bank_of({0, 0, 3, 0}, 2, 4.5, 0.5);
  std::vector<std::size_t> y{0}, neg{1};
  Tensor x(Shape{1, 2}, {1.0, 0.0}, true);
  auto r = ctcl_loss_with_negatives(x, y, bank, neg);
  CHECK(r.loss.item() == doctest::Approx(0.5));
  CHECK(r.report.active[0] == 1);

  Rng rng(0);
  auto drawn = ctcl_loss(x, y, bank, rng);
  CHECK(drawn.report.negatives == std::vector<std::size_t>{1});

  // x on its center
  CHECK(ctcl_loss_with_negatives(Tensor(Shape{1, 2}, {0.0, 0.0}), y, bank, neg).loss.item() == 0.0);

  // second row is hinge-inactive: m * 0.01 < 8.41
  Tensor pair(Shape{2, 2}, {1.0, 0.0, 0.1, 0.0}, true);
  std::vector<std::size_t> yy{0, 0}, nn{1, 1};
  backward(ctcl_loss_with_negatives(pair, yy, bank, nn).loss);
  CHECK(pair.grad()[0] != 0.0);
  CHECK(pair.grad()[2] == 0.0);
  CHECK(pair.grad()[3] == 0.0);
}

TEST_CASE("feature step and its factor-2 relation to the gradient") {
  std::vector<double> x{1.0, 0.0}, cp{0.0, 0.0}, cn{3.0, 0.0};
  auto dx = ctcl_feature_grad(x, cp, cn, 4.5, 1.0);
  CHECK(dx[0] == doctest::Approx(6.5));
  CHECK(dx[1] == 0.0);

  auto bank = bank_of({0, 0, 3, 0}, 2, 4.5, 1.0);
  std::vector<std::size_t> y{0}, neg{1};
  Tensor f(Shape{1, 2}, {1.0, 0.0}, true);
  auto fn = [&] { return ctcl_loss_with_negatives(f, y, bank, neg).loss; };
  auto fd = testutil::central_diff(fn, f);
  CHECK(fd[0] == doctest::Approx(13.0).epsilon(1e-8));
  CHECK(std::abs(fd[1]) < 1e-8);
  auto ad = testutil::autodiff(fn, f);
  CHECK(ad[0] == doctest::Approx(13.0).epsilon(1e-14));

  // m = 1 with coincident centers sits on the hinge boundary
  std::vector<double> same{0.5, -1.0};
  CHECK_THROWS_AS(ctcl_feature_grad(std::vector<double>{0.0, 2.0}, same, same, 1.0, 0.3),
                  ContractError);
}

TEST_CASE("center update examples") {
  auto bank = bank_of({0, 0, 3, 0}, 2, 4.5, 0.1);
  std::vector<double> x{1.0, 0.0};
  std::vector<std::size_t> y{0}, neg{1};
  auto d = center_deltas(bank, x, y, neg, MetricKind::ctcl);
  CHECK(d[0] == doctest::Approx(0.45));
  CHECK(d[1] == 0.0);
  CHECK(d[2] == doctest::Approx(0.2));
  CHECK(d[3] == 0.0);

  // no active sample: x on its own center
  std::vector<double> on{0.0, 0.0};
  for (double v : center_deltas(bank, on, y, neg, MetricKind::ctcl)) CHECK(v == 0.0);

  std::vector<std::size_t> bad{5};
  CHECK_THROWS_AS(center_deltas(bank, x, y, bad, MetricKind::ctcl), IndexError);
  CHECK_THROWS_AS(center_deltas(bank, x, bad, neg, MetricKind::ctcl), IndexError);

  update_centers(bank, x, y, neg);
  CHECK(bank.centers.at(0) == doctest::Approx(0.45));
  CHECK(bank.centers.at(2) == doctest::Approx(3.2));
}

TEST_CASE("m = 1 with coincident centers cancels") {
  // the closed form itself, evaluated without the hinge guard
  std::vector<double> c{0.5, -1.0}, x{2.0, 1.0};
  const double m = 1.0, eta = 0.3;
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(eta * ((m - 1.0) * x[i] - m * c[i] + c[i]) == 0.0);
  }
}

TEST_CASE("joint loss: lambda = 0 is cross-entropy only") {
  Rng rng(1);
  auto bank = CenterBank::gaussian(4, 3, 4.5, 0.5, 7);
  auto before = testutil::to_vec(bank.centers);
  ForwardOutput out{random_tensor({2, 4}, rng), random_tensor({2, 3}, rng)};
  std::vector<std::size_t> y{1, 3};
  JointLossConfig cfg;
  cfg.lambda = 0.0;
  Rng draw(2);
  auto j = joint_loss(out, y, bank, cfg, draw);
  CHECK(j.total.item() == softmax_cross_entropy(out.logits, y).item());
  backward(j.total);
  CHECK_FALSE(out.embedding.has_grad());
  CHECK(testutil::to_vec(bank.centers) == before);
  CHECK(j.report.metric >= 0.0);
}

TEST_CASE("joint loss total and linearity") {
  Rng rng(3);
  const std::size_t n = 4, din = 5, d = 3, k = 4;
  Tensor x = random_tensor({n, din}, rng, false);
  Tensor w = random_tensor({din, d}, rng);  // shared trunk weight
  Tensor a = random_tensor({d, k}, rng);
  std::vector<std::size_t> y{0, 1, 2, 3};
  auto bank = CenterBank::gaussian(k, d, 4.5, 0.5, 11, 1.0);

  auto forward = [&] {
    Tensor h = relu(matmul(x, w));
    return ForwardOutput{matmul(h, a), h};
  };
  JointLossConfig cfg;
  Rng draw(5);
  w.zero_grad();
  auto j = joint_loss(forward(), y, bank, cfg, draw);
  CHECK(j.report.ce > 0.0);
  CHECK(j.report.metric > 0.0);
  CHECK(j.report.total == doctest::Approx(j.report.ce + 0.024 * j.report.metric).epsilon(1e-15));
  backward(j.total);
  auto g_total = std::vector<double>(w.grad().begin(), w.grad().end());

  const auto negatives = j.report.negatives;
  auto g_ce = testutil::autodiff([&] { return softmax_cross_entropy(forward().logits, y); }, w);
  auto g_metric = testutil::autodiff(
      [&] {
        auto m = ctcl_loss_with_negatives(forward().embedding, y, bank, negatives);
        return scale(m.loss, 1.0 / double(n));
      },
      w);
  for (std::size_t i = 0; i < g_total.size(); ++i) {
    CHECK(g_total[i] == doctest::Approx(g_ce[i] + 0.024 * g_metric[i]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(
      [&] {
        JointLossConfig bad;
        bad.lambda = -1.0;
        joint_loss(forward(), y, bank, bad, draw);
      }(),
      ContractError);
}

TEST_CASE("loss errors") {
  auto bank = bank_of({0, 0, 3, 0}, 2, 4.5, 0.5);
  Rng rng(0);
  std::vector<std::size_t> y{2};
  CHECK_THROWS_AS(ctcl_loss(Tensor(Shape{1, 2}, 0.0), y, bank, rng), IndexError);
  std::vector<std::size_t> two{0, 1};
  CHECK_THROWS_AS(ctcl_loss(Tensor(Shape{1, 2}, 0.0), two, bank, rng), DimensionError);
  std::vector<std::size_t> ok{0};
  CHECK_THROWS_AS(ctcl_loss(Tensor(Shape{1, 3}, 0.0), ok, bank, rng), DimensionError);
  std::vector<std::size_t> self{0};
  CHECK_THROWS_AS(ctcl_loss_with_negatives(Tensor(Shape{1, 2}, 0.0), ok, bank, self),
                  ContractError);
  CHECK_THROWS_AS(CenterBank::gaussian(3, 2, 4.5, 1.5, 0), ContractError);
  CHECK_THROWS_AS(metric_kind_from_string("triplet"), ContractError);
}

TEST_CASE("property: hinge terms are nonnegative and negatives avoid the label") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    const std::size_t k = 2 + seed % 7;
    auto bank = CenterBank::gaussian(k, 4, 0.5 + double(seed % 5), 0.5, seed, 1.0);
    std::vector<std::size_t> y(12);
    for (auto& v : y) v = uniform_index(rng, k);
    Tensor f = random_tensor({12, 4}, rng, false, -2.0, 2.0);
    auto c = ctcl_loss(f, y, bank, rng);
    auto t = tcl_loss(f, y, bank);
    CHECK(c.loss.item() >= 0.0);
    CHECK(t.loss.item() >= 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(c.report.negatives[i] != y[i]);
      CHECK(t.report.negatives[i] != y[i]);
      CHECK(c.report.d_pos[i] >= 0.0);
      CHECK(c.report.d_neg[i] >= 0.0);
    }
    auto drawn = draw_negatives(y, k, rng);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(drawn[i] != y[i]);
  }
}

TEST_CASE("property: negative draws are uniform over the other classes") {
  Rng rng(4);
  std::vector<std::size_t> y(40000, 2);
  auto neg = draw_negatives(y, 5, rng);
  std::vector<double> count(5, 0.0);
  for (auto v : neg) count[v] += 1.0;
  CHECK(count[2] == 0.0);
  for (std::size_t k : {0, 1, 3, 4}) CHECK(std::abs(count[k] / 40000.0 - 0.25) < 0.01);
}

TEST_CASE("property: center step is a descent direction") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    for (MetricKind kind : {MetricKind::ctcl, MetricKind::tcl}) {
      Rng rng(seed);
      auto bank = CenterBank::gaussian(5, 3, kind == MetricKind::ctcl ? 4.5 : 5.0, 0.5, seed, 1.0);
      std::vector<std::size_t> y(8);
      for (auto& v : y) v = uniform_index(rng, 5);
      Tensor f = random_tensor({8, 3}, rng, false, -2.0, 2.0);
      bank.centers.set_requires_grad(true);
      bank.centers.zero_grad();
      auto m = kind == MetricKind::ctcl ? ctcl_loss(f, y, bank, rng) : tcl_loss(f, y, bank);
      if (m.report.active_fraction() == 0.0) continue;
      backward(m.loss);
      auto delta = center_deltas(bank, f.values(), y, m.report.negatives, kind);
      for (std::size_t k = 0; k < 5; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < 3; ++j) dot += delta[k * 3 + j] * -bank.centers.grad()[k * 3 + j];
        CHECK(dot >= 0.0);
      }
    }
  }
}

TEST_CASE("property: frozen features compress toward their centers") {
  auto cloud = generate_feature_cloud(6, 8, 0.5, 3);
  const std::size_t n = cloud.size();
  Tensor f(Shape{n, 8}, cloud.points);
  auto bank = CenterBank::gaussian(6, 8, 4.5, 0.002, 1);
  Rng rng(9);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 200; ++step) {
    auto m = ctcl_loss(f, cloud.labels, bank, rng);
    const double cur = m.report.mean_d_pos();
    if (m.report.active_fraction() == 0.0) break;
    CHECK(cur <= prev + 1e-12);
    prev = cur;
    update_centers(bank, cloud.points, cloud.labels, m.report.negatives);
  }
}

TEST_CASE("loss report json") {
  auto bank = bank_of({0, 0, 3, 0}, 2, 4.5, 0.5);
  std::vector<std::size_t> y{0}, neg{1};
  auto r = ctcl_loss_with_negatives(Tensor(Shape{1, 2}, {1.0, 0.0}), y, bank, neg).report;
  auto j = r.to_json(7);
  CHECK(j.at("step") == 7);
  CHECK(j.at("mean_d_pos").get<double>() == 1.0);
  CHECK(j.at("mean_d_neg").get<double>() == 4.0);
  CHECK(j.at("active_fraction").get<double>() == 1.0);
  for (const char* key : {"total", "ce", "metric"}) CHECK(j.contains(key));
}
