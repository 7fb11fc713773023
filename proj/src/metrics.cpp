#include "mabr/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mabr {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void validate(const EvalTable& t) {
  require(!t.gold.empty(), "metrics: empty table");
  require(t.gold.size() == t.pred.size() && t.gold.size() == t.group.size(),
          "metrics: column lengths differ");
  require(t.num_classes >= 2, "metrics: need at least 2 classes");
  for (size_t i = 0; i < t.gold.size(); ++i) {
    require(t.gold[i] >= 0 && t.gold[i] < t.num_classes, "metrics: gold label out of range");
    require(t.pred[i] >= 0 && t.pred[i] < t.num_classes, "metrics: prediction out of range");
    require(t.group[i] == 0 || t.group[i] == 1, "metrics: protected attribute must be 0 or 1");
  }
}

void require_both_groups(const EvalTable& t) {
  int counts[2] = {0, 0};
  for (int g : t.group) ++counts[g];
  require(counts[0] > 0 && counts[1] > 0, "metrics: a protected group has zero samples");
}

// Empirical distribution of `values` over [0, support), smoothed later by the
// KL kernel.
Vector empirical(const std::vector<int>& values, int support) {
  Vector p = Vector::Zero(support);
  for (int v : values) p(v) += 1.0;
  if (!values.empty()) p /= static_cast<double>(values.size());
  return p;
}

}  // namespace

double accuracy(const EvalTable& table) {
  validate(table);
  size_t correct = 0;
  for (size_t i = 0; i < table.gold.size(); ++i)
    if (table.gold[i] == table.pred[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(table.gold.size());
}

TprGapResult tpr_gap_rms(const EvalTable& table) {
  validate(table);
  require_both_groups(table);

  TprGapResult out;
  double sum_sq = 0.0;
  int scorable = 0;
  for (int y = 0; y < table.num_classes; ++y) {
    int gold_count[2] = {0, 0};
    int hit_count[2] = {0, 0};
    for (size_t i = 0; i < table.gold.size(); ++i) {
      if (table.gold[i] != y) continue;
      ++gold_count[table.group[i]];
      if (table.pred[i] == y) ++hit_count[table.group[i]];
    }
    if (gold_count[0] + gold_count[1] == 0) continue;  // class absent from gold
    if (gold_count[0] == 0 || gold_count[1] == 0) {
      ++out.skipped_classes;
      continue;
    }
    const double tpr0 = static_cast<double>(hit_count[0]) / gold_count[0];
    const double tpr1 = static_cast<double>(hit_count[1]) / gold_count[1];
    sum_sq += (tpr1 - tpr0) * (tpr1 - tpr0);
    ++scorable;
  }
  require(scorable > 0, "tpr_gap_rms: no scorable class");
  out.rms = std::sqrt(sum_sq / static_cast<double>(scorable));
  return out;
}

double independence(const EvalTable& table, double epsilon) {
  validate(table);
  require_both_groups(table);

  const Vector marginal = empirical(table.pred, table.num_classes);
  double total = 0.0;
  for (int z = 0; z < 2; ++z) {
    std::vector<int> preds;
    for (size_t i = 0; i < table.pred.size(); ++i)
      if (table.group[i] == z) preds.push_back(table.pred[i]);
    total += kl_divergence(marginal, empirical(preds, table.num_classes), epsilon);
  }
  return total;
}

SufficiencyResult sufficiency(const EvalTable& table, double epsilon) {
  validate(table);
  require_both_groups(table);

  SufficiencyResult out;
  int evaluated = 0;
  for (int r = 0; r < table.num_classes; ++r) {
    std::vector<int> gold_given_r;
    for (size_t i = 0; i < table.pred.size(); ++i)
      if (table.pred[i] == r) gold_given_r.push_back(table.gold[i]);
    if (gold_given_r.empty()) {
      out.skipped_cells += 2;  // both group cells are empty
      continue;
    }
    const Vector cond_r = empirical(gold_given_r, table.num_classes);
    for (int z = 0; z < 2; ++z) {
      std::vector<int> gold_rz;
      for (size_t i = 0; i < table.pred.size(); ++i)
        if (table.pred[i] == r && table.group[i] == z) gold_rz.push_back(table.gold[i]);
      if (gold_rz.empty()) {
        ++out.skipped_cells;
        continue;
      }
      out.value += kl_divergence(cond_r, empirical(gold_rz, table.num_classes), epsilon);
      ++evaluated;
    }
  }
  require(evaluated > 0, "sufficiency: all cells empty");
  return out;
}

double kl_divergence(const Vector& p, const Vector& q, double epsilon) {
  require(p.size() == q.size(), "kl_divergence: support mismatch " +
                                    std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  require(p.size() > 0, "kl_divergence: empty support");
  require((p.array() >= 0.0).all() && (q.array() >= 0.0).all(),
          "kl_divergence: negative entry");
  require(std::abs(p.sum() - 1.0) <= 1e-9 && std::abs(q.sum() - 1.0) <= 1e-9,
          "kl_divergence: inputs must sum to 1");

  const Vector ps = (p.array() + epsilon) / (p.sum() + epsilon * static_cast<double>(p.size()));
  const Vector qs = (q.array() + epsilon) / (q.sum() + epsilon * static_cast<double>(q.size()));
  double kl = 0.0;
  for (Index k = 0; k < ps.size(); ++k) kl += ps(k) * std::log(ps(k) / qs(k));
  return kl;
}

double dto(double accuracy, double tpr_rms) {
  return std::sqrt((1.0 - accuracy) * (1.0 - accuracy) + tpr_rms * tpr_rms);
}

FairnessReport evaluate_table(const EvalTable& table) {
  FairnessReport r;
  r.accuracy = accuracy(table);
  const TprGapResult gap = tpr_gap_rms(table);
  r.tpr_rms = gap.rms;
  r.skipped_classes = gap.skipped_classes;
  r.independence = independence(table);
  const SufficiencyResult suff = sufficiency(table);
  r.sufficiency = suff.value;
  r.skipped_cells = suff.skipped_cells;
  r.dto = dto(r.accuracy, r.tpr_rms);
  return r;
}

}  // namespace mabr
