#pragma once

#include <vector>

#include "mabr/types.hpp"

namespace mabr {

// How a detector probability becomes a flagging score. kProbability reads the
// sigmoid output directly (predicted probability that the main model is
// correct); kConfidence uses max(p, 1-p).
enum class ScoreMode { kProbability, kConfidence };

struct TauConfig {
  double tau = 0.0;
  double target_flagged_fraction = 0.30;
};

// Per-sample, per-layer biased indicators for one epoch.
struct FlagMatrix {
  BoolMatrix flags;  // N x L
  int epoch = 0;
};

struct TauCalibration {
  double tau = 0.0;
  bool degenerate = false;  // all calibration scores equal
};

// 1 where prediction equals gold, else 0.
std::vector<int> correctness_targets(const std::vector<int>& predictions,
                                     const std::vector<int>& gold);

// Empirical (1 - target_fraction) quantile of pooled detector scores, so
// that strictly-greater flagging marks about target_fraction of them.
TauCalibration calibrate_tau(const std::vector<double>& scores, double target_fraction);

double detector_score(double probability, ScoreMode mode);

// flags(i, l) = scores(i, l) > tau (strict).
BoolMatrix flag_by_detector(const Matrix& scores, double tau);

// true exactly where prediction != gold.
std::vector<int> flag_hard(const std::vector<int>& predictions, const std::vector<int>& gold);

// flags(i, l) = detector_flags(i, l) OR hard_flags(i).
FlagMatrix combine_flags(const BoolMatrix& detector_flags, const std::vector<int>& hard_flags,
                         int epoch);

double flagged_fraction(const BoolMatrix& flags, Index layer);

}  // namespace mabr
