#pragma once

#include <vector>

#include "mabr/types.hpp"

namespace mabr {

constexpr double kKlEpsilon = 1e-9;

// Predictions, gold labels and the binary protected attribute for one split.
// The protected attribute is read only here and in reporting, never by
// training code.
struct EvalTable {
  std::vector<int> gold;
  std::vector<int> pred;
  std::vector<int> group;  // 0 or 1
  int num_classes = 2;
};

struct TprGapResult {
  double rms = 0.0;
  int skipped_classes = 0;  // classes missing a gold sample in some group
};

struct SufficiencyResult {
  double value = 0.0;
  int skipped_cells = 0;  // (prediction, group) cells with no samples
};

struct FairnessReport {
  double accuracy = 0.0;
  double tpr_rms = 0.0;
  double independence = 0.0;
  double sufficiency = 0.0;
  double dto = 0.0;
  int skipped_cells = 0;
  int skipped_classes = 0;
};

double accuracy(const EvalTable& table);

// sqrt(mean over scorable classes of (TPR_group1 - TPR_group0)^2), where a
// class is scorable when both groups contain at least one gold sample for it.
TprGapResult tpr_gap_rms(const EvalTable& table);

// sum over groups z of KL(P(pred) || P(pred | z)), natural log, epsilon-smoothed.
double independence(const EvalTable& table, double epsilon = kKlEpsilon);

// sum over predictions r and groups z of KL(P(gold | pred=r) || P(gold | pred=r, z)).
SufficiencyResult sufficiency(const EvalTable& table, double epsilon = kKlEpsilon);

// KL(p || q) after adding epsilon to every cell and renormalizing. p and q
// must share support size and each sum to 1 within 1e-9.
double kl_divergence(const Vector& p, const Vector& q, double epsilon = kKlEpsilon);

// Distance from (accuracy, 1 - tpr_rms) to the utopia point (1, 1).
double dto(double accuracy, double tpr_rms);

FairnessReport evaluate_table(const EvalTable& table);

}  // namespace mabr
