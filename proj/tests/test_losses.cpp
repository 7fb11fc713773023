#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mabr/losses.hpp"
#include "oracles.hpp"

using namespace mabr;

namespace {

ad::Var leaf_scalar(ad::Tape& t, double v) { return t.leaf(Matrix::Constant(1, 1, v)); }

ad::Var leaf_col(ad::Tape& t, const std::vector<double>& v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return t.leaf(m);
}

}  // namespace

TEST_CASE("main loss examples") {
  ad::Tape t;

  SUBCASE("near-certain true class gives near-zero loss") {
    Matrix logits(1, 2);
    logits << 40.0, -40.0;
    CHECK(main_loss(t.leaf(logits), {0}).scalar() < 1e-12);
  }
  SUBCASE("uniform logits, two classes: ln 2") {
    CHECK(main_loss(t.leaf(Matrix::Zero(1, 2)), {0}).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("mean composition over two samples") {
    Matrix a(1, 3), b(1, 3);
    a << 0.3, -0.2, 1.1;
    b << -1.0, 0.4, 0.0;
    const double la = main_loss(t.leaf(a), {2}).scalar();
    const double lb = main_loss(t.leaf(b), {1}).scalar();
    Matrix both(2, 3);
    both << 0.3, -0.2, 1.1, -1.0, 0.4, 0.0;
    CHECK(main_loss(t.leaf(both), {2, 1}).scalar() ==
          doctest::Approx((la + lb) / 2.0).epsilon(1e-14));
  }
  SUBCASE("permutation invariance over batch order") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Matrix logits(5, 3);
    for (Index i = 0; i < logits.size(); ++i) logits(i / 3, i % 3) = dist(rng);
    const std::vector<int> labels = {0, 2, 1, 1, 0};
    Matrix shuffled(5, 3);
    const std::vector<int> order = {3, 0, 4, 2, 1};
    std::vector<int> labels_shuffled(5);
    for (int i = 0; i < 5; ++i) {
      shuffled.row(i) = logits.row(order[static_cast<size_t>(i)]);
      labels_shuffled[static_cast<size_t>(i)] = labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
    }
    CHECK(main_loss(t.leaf(logits), labels).scalar() ==
          doctest::Approx(main_loss(t.leaf(shuffled), labels_shuffled).scalar()).epsilon(1e-14));
  }
  SUBCASE("empty batch rejected") {
    CHECK_THROWS_AS(main_loss(t.leaf(Matrix(0, 2)), {}), std::invalid_argument);
  }
}

TEST_CASE("detector loss examples") {
  ad::Tape t;

  SUBCASE("probability 0.5 gives ln 2 for either target") {
    CHECK(bias_loss_layer(leaf_col(t, {0.5}), {1}).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bias_loss_layer(leaf_col(t, {0.5}), {0}).scalar() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("probability 0.9, target 1: -ln 0.9") {
    CHECK(bias_loss_layer(leaf_col(t, {0.9}), {1}).scalar() ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  }
  SUBCASE("confident correct detector drives the loss toward zero") {
    CHECK(bias_loss_layer(leaf_col(t, {1.0 - 1e-12, 1e-12}), {1, 0}).scalar() < 1e-10);
  }
  SUBCASE("probability exactly 0 or 1 rejected") {
    CHECK_THROWS_AS(bias_loss_layer(leaf_col(t, {1.0}), {1}), std::invalid_argument);
    CHECK_THROWS_AS(bias_loss_layer(leaf_col(t, {0.0}), {0}), std::invalid_argument);
  }
}

TEST_CASE("adversarial loss examples") {
  ad::Tape t;
  CHECK(adv_loss_layer(leaf_col(t, {0.5, 0.5}), {1, 0}).scalar() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(adv_loss_layer(leaf_col(t, {0.8}), {1}).scalar() ==
        doctest::Approx(-std::log(0.8)).epsilon(1e-12));
  CHECK(adv_loss_layer(leaf_col(t, {0.2, 0.2}), {0, 0}).scalar() ==
        doctest::Approx(-std::log(0.8)).epsilon(1e-12));
}

TEST_CASE("per-layer sum") {
  CHECK(bias_loss_total({0.1, 0.2, 0.3}) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(bias_loss_total({0.7}) == 0.7);
  CHECK(bias_loss_total({0.0, 0.0}) == 0.0);
}

TEST_CASE("total loss composition") {
  ad::Tape t;

  SUBCASE("plain sum") {
    const TotalLoss total = total_loss(leaf_scalar(t, 1.0),
                                       {leaf_scalar(t, 0.5), leaf_scalar(t, 0.5)},
                                       {leaf_scalar(t, 0.25), leaf_scalar(t, 0.25)});
    CHECK(total.breakdown.total == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(total.node.scalar() == total.breakdown.total);
  }
  SUBCASE("zero adversarial terms degenerate to main plus bias") {
    const TotalLoss total = total_loss(leaf_scalar(t, 0.9),
                                       {leaf_scalar(t, 0.3), leaf_scalar(t, 0.2)},
                                       {leaf_scalar(t, 0.0), leaf_scalar(t, 0.0)});
    CHECK(total.breakdown.total == doctest::Approx(0.9 + 0.3 + 0.2).epsilon(1e-15));
  }
  SUBCASE("single layer reduces to a three-term sum") {
    const TotalLoss total =
        total_loss(leaf_scalar(t, 0.4), {leaf_scalar(t, 0.3)}, {leaf_scalar(t, 0.2)});
    CHECK(total.breakdown.total == doctest::Approx(0.9).epsilon(1e-15));
  }
  SUBCASE("breakdown invariant holds exactly") {
    const TotalLoss total = total_loss(leaf_scalar(t, 0.37),
                                       {leaf_scalar(t, 0.11), leaf_scalar(t, 0.23)},
                                       {leaf_scalar(t, 0.05), leaf_scalar(t, 0.07)});
    double recomputed = total.breakdown.main;
    for (double v : total.breakdown.bias_per_layer) recomputed += v;
    for (double v : total.breakdown.adv_per_layer) recomputed += v;
    CHECK(total.breakdown.total == recomputed);
    CHECK(total.node.scalar() == total.breakdown.total);
  }
  SUBCASE("inactive layers contribute exact zero") {
    std::vector<ad::Var> bias(2), adv(2);
    bias[1] = leaf_scalar(t, 0.5);
    adv[1] = leaf_scalar(t, 0.25);
    const TotalLoss total = total_loss(leaf_scalar(t, 1.0), bias, adv);
    CHECK(total.breakdown.bias_per_layer[0] == 0.0);
    CHECK(total.breakdown.adv_per_layer[0] == 0.0);
    CHECK(total.breakdown.total == doctest::Approx(1.75).epsilon(1e-15));
  }
  SUBCASE("length mismatch rejected") {
    CHECK_THROWS_AS(total_loss(leaf_scalar(t, 1.0), {leaf_scalar(t, 0.1)}, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(make_breakdown(1.0, {0.1}, {0.1, 0.2}), std::invalid_argument);
  }
}

TEST_CASE("pinned four-sample fixture matches scalar recomputation to 1e-12") {
  // Frozen logits and head probabilities for batch 4, 3 classes, 2 layers.
  const std::vector<std::vector<double>> logits = {{0.2, -0.1, 0.05},
                                                   {1.0, 1.0, 1.0},
                                                   {-2.0, 0.5, 0.3},
                                                   {0.0, -1.0, 2.0}};
  const std::vector<int> labels = {0, 2, 1, 2};
  const std::vector<std::vector<double>> bias_probs = {{0.7, 0.2, 0.55, 0.9},
                                                       {0.35, 0.6, 0.8, 0.15}};
  const std::vector<std::vector<int>> s_targets = {{1, 0, 1, 1}, {1, 0, 1, 1}};
  const std::vector<std::vector<double>> adv_probs = {{0.3, 0.8, 0.5, 0.6},
                                                      {0.45, 0.65, 0.25, 0.75}};
  const std::vector<std::vector<int>> z_flags = {{0, 1, 0, 1}, {1, 1, 0, 0}};

  ad::Tape t;
  Matrix lm(4, 3);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) lm(i, c) = logits[static_cast<size_t>(i)][static_cast<size_t>(c)];

  ad::Var main = main_loss(t.leaf(lm), labels);
  std::vector<ad::Var> bias_terms, adv_terms;
  for (int l = 0; l < 2; ++l) {
    bias_terms.push_back(
        bias_loss_layer(leaf_col(t, bias_probs[static_cast<size_t>(l)]), s_targets[static_cast<size_t>(l)]));
    adv_terms.push_back(
        adv_loss_layer(leaf_col(t, adv_probs[static_cast<size_t>(l)]), z_flags[static_cast<size_t>(l)]));
  }
  const TotalLoss total = total_loss(main, bias_terms, adv_terms);

  const double expect_main = oracles::main_loss(logits, labels);
  CHECK(std::abs(total.breakdown.main - expect_main) < 1e-12);
  double expect_total = expect_main;
  for (int l = 0; l < 2; ++l) {
    const double eb = oracles::bce(bias_probs[static_cast<size_t>(l)], s_targets[static_cast<size_t>(l)]);
    const double ea = oracles::bce(adv_probs[static_cast<size_t>(l)], z_flags[static_cast<size_t>(l)]);
    CHECK(std::abs(total.breakdown.bias_per_layer[static_cast<size_t>(l)] - eb) < 1e-12);
    CHECK(std::abs(total.breakdown.adv_per_layer[static_cast<size_t>(l)] - ea) < 1e-12);
    expect_total += eb + ea;
  }
  CHECK(std::abs(total.breakdown.total - expect_total) < 1e-12);

  double recomputed = total.breakdown.main;
  for (double v : total.breakdown.bias_per_layer) recomputed += v;
  for (double v : total.breakdown.adv_per_layer) recomputed += v;
  CHECK(total.breakdown.total == recomputed);
}

TEST_CASE("gradient routing through the combined objective") {
  // x stands in for an encoder representation feeding three heads the way the
  // model wires them: classifier directly, detector via detach, discriminator
  // via gradient reversal.
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix x0(4, 3), wc(3, 2), wb(3, 1), wd(3, 1);
  for (Index i = 0; i < x0.size(); ++i) x0(i / 3, i % 3) = dist(rng);
  for (Index i = 0; i < wc.size(); ++i) wc(i / 2, i % 2) = dist(rng);
  for (Index i = 0; i < 3; ++i) {
    wb(i, 0) = dist(rng);
    wd(i, 0) = dist(rng);
  }
  const std::vector<int> labels = {0, 1, 1, 0};
  const std::vector<int> flags = {1, 0, 1, 1};
  const double lambda = 0.7;

  const auto encoder_grad = [&](const std::vector<int>& s_targets, bool with_adv,
                                bool with_main) {
    ad::Tape t;
    ad::Var x = t.leaf(x0);
    ad::Var main = main_loss(ad::matmul(x, t.leaf(wc)), labels);
    ad::Var bias =
        bias_loss_layer(ad::sigmoid(ad::matmul(ad::detach(x), t.leaf(wb))), s_targets);
    ad::Var adv = adv_loss_layer(
        ad::sigmoid(ad::matmul(ad::grad_reverse(x, lambda), t.leaf(wd))), flags);
    LossWeights w;
    w.main = with_main ? 1.0 : 0.0;
    w.adv = with_adv ? 1.0 : 0.0;
    const TotalLoss total = total_loss(main, {bias}, {adv}, w);
    t.backward(total.node);
    return Matrix(x.grad());
  };

  SUBCASE("zeroing detector targets never changes encoder gradients") {
    const Matrix g1 = encoder_grad({1, 1, 0, 1}, true, true);
    const Matrix g2 = encoder_grad({0, 0, 0, 0}, true, true);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("encoder gradient is main direct plus reversed adversarial") {
    const Matrix combined = encoder_grad({1, 0, 1, 1}, true, true);
    const Matrix main_only = encoder_grad({1, 0, 1, 1}, false, true);

    // Adversarial-only gradient through the identity path.
    ad::Tape t;
    ad::Var x = t.leaf(x0);
    ad::Var adv =
        adv_loss_layer(ad::sigmoid(ad::matmul(x, t.leaf(wd))), flags);
    t.backward(adv);
    const Matrix identity_adv = x.grad();

    CHECK((combined - (main_only - lambda * identity_adv)).cwiseAbs().maxCoeff() < 1e-12);
  }
}
