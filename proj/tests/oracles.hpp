#pragma once

// Test-only brute-force oracles. Everything here recomputes expected values
// from first principles with plain loops, independent of the library code
// paths it checks.

#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracles {

inline double smoothed_kl(const std::vector<double>& p, const std::vector<double>& q,
                          double eps) {
  double psum = 0.0, qsum = 0.0;
  for (double v : p) psum += v + eps;
  for (double v : q) qsum += v + eps;
  double kl = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    const double ps = (p[k] + eps) / psum;
    const double qs = (q[k] + eps) / qsum;
    kl += ps * std::log(ps / qs);
  }
  return kl;
}

struct Table {
  std::vector<int> gold, pred, group;
  int classes = 2;
};

inline double tpr_rms(const Table& t, int* skipped = nullptr) {
  double sum_sq = 0.0;
  int scorable = 0, skip = 0;
  for (int y = 0; y < t.classes; ++y) {
    double gold_n[2] = {0, 0}, hits[2] = {0, 0};
    for (size_t i = 0; i < t.gold.size(); ++i) {
      if (t.gold[i] != y) continue;
      gold_n[t.group[i]] += 1;
      if (t.pred[i] == y) hits[t.group[i]] += 1;
    }
    if (gold_n[0] + gold_n[1] == 0) continue;
    if (gold_n[0] == 0 || gold_n[1] == 0) {
      ++skip;
      continue;
    }
    const double gap = hits[1] / gold_n[1] - hits[0] / gold_n[0];
    sum_sq += gap * gap;
    ++scorable;
  }
  if (skipped) *skipped = skip;
  if (scorable == 0) throw std::runtime_error("oracle tpr_rms: no scorable class");
  return std::sqrt(sum_sq / scorable);
}

inline std::vector<double> distribution(const std::vector<int>& values, int support) {
  std::vector<double> p(static_cast<size_t>(support), 0.0);
  for (int v : values) p[static_cast<size_t>(v)] += 1.0;
  if (!values.empty())
    for (double& v : p) v /= static_cast<double>(values.size());
  return p;
}

inline double independence(const Table& t, double eps) {
  const std::vector<double> marginal = distribution(t.pred, t.classes);
  double total = 0.0;
  for (int z = 0; z < 2; ++z) {
    std::vector<int> preds;
    for (size_t i = 0; i < t.pred.size(); ++i)
      if (t.group[i] == z) preds.push_back(t.pred[i]);
    total += smoothed_kl(marginal, distribution(preds, t.classes), eps);
  }
  return total;
}

inline double sufficiency(const Table& t, double eps, int* skipped = nullptr) {
  double total = 0.0;
  int skip = 0, evaluated = 0;
  for (int r = 0; r < t.classes; ++r) {
    std::vector<int> gold_r;
    for (size_t i = 0; i < t.pred.size(); ++i)
      if (t.pred[i] == r) gold_r.push_back(t.gold[i]);
    if (gold_r.empty()) {
      skip += 2;
      continue;
    }
    for (int z = 0; z < 2; ++z) {
      std::vector<int> gold_rz;
      for (size_t i = 0; i < t.pred.size(); ++i)
        if (t.pred[i] == r && t.group[i] == z) gold_rz.push_back(t.gold[i]);
      if (gold_rz.empty()) {
        ++skip;
        continue;
      }
      total += smoothed_kl(distribution(gold_r, t.classes), distribution(gold_rz, t.classes), eps);
      ++evaluated;
    }
  }
  if (skipped) *skipped = skip;
  if (evaluated == 0) throw std::runtime_error("oracle sufficiency: all cells empty");
  return total;
}

// Plain-double recomputation of the mean gold-class negative log-likelihood.
inline double main_loss(const std::vector<std::vector<double>>& logits,
                        const std::vector<int>& labels) {
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    double mx = logits[i][0];
    for (double v : logits[i]) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits[i]) denom += std::exp(v - mx);
    total += -(logits[i][static_cast<size_t>(labels[i])] - mx - std::log(denom));
  }
  return total / static_cast<double>(logits.size());
}

inline double bce(const std::vector<double>& probs, const std::vector<int>& targets) {
  double total = 0.0;
  for (size_t i = 0; i < probs.size(); ++i)
    total += -(targets[i] * std::log(probs[i]) + (1 - targets[i]) * std::log(1.0 - probs[i]));
  return total / static_cast<double>(probs.size());
}

}  // namespace oracles
