#pragma once

#include <vector>

#include "mabr/autodiff.hpp"
#include "mabr/types.hpp"

namespace mabr {

struct LossWeights {
  double main = 1.0;
  double bias = 1.0;
  double adv = 1.0;
};

// Scalar record of one step's objective. total always equals
// main + sum(bias_per_layer) + sum(adv_per_layer), summed in ascending layer
// order; entries already carry their LossWeights factor.
struct LossBreakdown {
  double main = 0.0;
  std::vector<double> bias_per_layer;
  std::vector<double> adv_per_layer;
  double total = 0.0;
};

LossBreakdown make_breakdown(double main, std::vector<double> bias_per_layer,
                             std::vector<double> adv_per_layer);

// Mean negative log-likelihood of the gold class, composed through
// log-softmax. Rejects an empty batch and out-of-range labels.
ad::Var main_loss(ad::Var logits, const std::vector<int>& labels);

// Mean binary cross-entropy of probabilities (strictly inside (0,1)) against
// 0/1 targets. Shared kernel for detector and discriminator losses.
ad::Var binary_cross_entropy(ad::Var probs, const std::vector<int>& targets);

// Detector loss at one layer: probabilities vs. correctness indicators.
ad::Var bias_loss_layer(ad::Var bias_probs, const std::vector<int>& correct_targets);

// Discriminator loss at one layer: probabilities vs. biased-sample flags.
ad::Var adv_loss_layer(ad::Var domain_probs, const std::vector<int>& flags);

// Plain sum of per-layer losses in ascending order.
double bias_loss_total(const std::vector<double>& per_layer);

struct TotalLoss {
  ad::Var node;  // scalar objective on the tape
  LossBreakdown breakdown;
};

// Combined objective: weights.main * main + sum_l weights.bias * bias[l]
// + sum_l weights.adv * adv[l]. Invalid (unset) Vars in bias/adv stand for
// inactive layers and contribute exact zero.
TotalLoss total_loss(ad::Var main, const std::vector<ad::Var>& bias_layers,
                     const std::vector<ad::Var>& adv_layers,
                     const LossWeights& weights = {});

}  // namespace mabr
