#include "mabr/losses.hpp"

#include <stdexcept>
#include <string>

namespace mabr {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

LossBreakdown make_breakdown(double main, std::vector<double> bias_per_layer,
                             std::vector<double> adv_per_layer) {
  require(bias_per_layer.size() == adv_per_layer.size(),
          "make_breakdown: " + std::to_string(bias_per_layer.size()) + " bias vs " +
              std::to_string(adv_per_layer.size()) + " adv layers");
  LossBreakdown b;
  b.main = main;
  b.bias_per_layer = std::move(bias_per_layer);
  b.adv_per_layer = std::move(adv_per_layer);
  b.total = main;
  for (double v : b.bias_per_layer) b.total += v;
  for (double v : b.adv_per_layer) b.total += v;
  return b;
}

ad::Var main_loss(ad::Var logits, const std::vector<int>& labels) {
  require(logits.value().rows() >= 1, "main_loss: empty batch");
  require(static_cast<Index>(labels.size()) == logits.value().rows(),
          "main_loss: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(logits.value().rows()) + " rows");
  ad::Var picked = ad::select_cols(ad::log_softmax_rows(logits), labels);
  return ad::scale(ad::mean_axis(picked, 0), -1.0);
}

ad::Var binary_cross_entropy(ad::Var probs, const std::vector<int>& targets) {
  const Matrix& p = probs.value();
  require(p.cols() == 1 && p.rows() >= 1,
          "binary_cross_entropy: expected Nx1 probabilities, got " + shape_str(p));
  require(static_cast<Index>(targets.size()) == p.rows(),
          "binary_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
              std::to_string(p.rows()) + " rows");
  require((p.array() > 0.0).all() && (p.array() < 1.0).all(),
          "binary_cross_entropy: probability exactly 0 or 1; upstream must clamp");

  Matrix t(p.rows(), 1);
  for (Index i = 0; i < p.rows(); ++i) {
    const int v = targets[static_cast<size_t>(i)];
    require(v == 0 || v == 1, "binary_cross_entropy: target " + std::to_string(v) +
                                  " at row " + std::to_string(i) + " not in {0,1}");
    t(i, 0) = static_cast<double>(v);
  }
  ad::Var pos = ad::cmul(ad::log(probs), t);
  ad::Var neg = ad::cmul(ad::log(ad::one_minus(probs)), Matrix(1.0 - t.array()));
  return ad::scale(ad::mean_axis(ad::add(pos, neg), 0), -1.0);
}

ad::Var bias_loss_layer(ad::Var bias_probs, const std::vector<int>& correct_targets) {
  return binary_cross_entropy(bias_probs, correct_targets);
}

ad::Var adv_loss_layer(ad::Var domain_probs, const std::vector<int>& flags) {
  return binary_cross_entropy(domain_probs, flags);
}

double bias_loss_total(const std::vector<double>& per_layer) {
  double total = 0.0;
  for (double v : per_layer) total += v;
  return total;
}

TotalLoss total_loss(ad::Var main, const std::vector<ad::Var>& bias_layers,
                     const std::vector<ad::Var>& adv_layers, const LossWeights& weights) {
  require(bias_layers.size() == adv_layers.size(),
          "total_loss: " + std::to_string(bias_layers.size()) + " bias vs " +
              std::to_string(adv_layers.size()) + " adv layers");

  TotalLoss out;
  ad::Var total = ad::scale(main, weights.main);
  out.breakdown.main = weights.main * main.scalar();
  out.breakdown.bias_per_layer.resize(bias_layers.size(), 0.0);
  out.breakdown.adv_per_layer.resize(adv_layers.size(), 0.0);

  for (size_t l = 0; l < bias_layers.size(); ++l) {
    if (!bias_layers[l].valid()) continue;
    ad::Var term = ad::scale(bias_layers[l], weights.bias);
    out.breakdown.bias_per_layer[l] = term.scalar();
    total = ad::add(total, term);
  }
  for (size_t l = 0; l < adv_layers.size(); ++l) {
    if (!adv_layers[l].valid()) continue;
    ad::Var term = ad::scale(adv_layers[l], weights.adv);
    out.breakdown.adv_per_layer[l] = term.scalar();
    total = ad::add(total, term);
  }

  out.node = total;
  out.breakdown.total = out.breakdown.main;
  for (double v : out.breakdown.bias_per_layer) out.breakdown.total += v;
  for (double v : out.breakdown.adv_per_layer) out.breakdown.total += v;
  return out;
}

}  // namespace mabr
