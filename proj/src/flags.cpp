#include "mabr/flags.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mabr {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

std::vector<int> correctness_targets(const std::vector<int>& predictions,
                                     const std::vector<int>& gold) {
  require(predictions.size() == gold.size(),
          "correctness_targets: " + std::to_string(predictions.size()) + " predictions vs " +
              std::to_string(gold.size()) + " gold labels");
  std::vector<int> s(predictions.size());
  for (size_t i = 0; i < predictions.size(); ++i) s[i] = predictions[i] == gold[i] ? 1 : 0;
  return s;
}

TauCalibration calibrate_tau(const std::vector<double>& scores, double target_fraction) {
  require(scores.size() >= 10, "calibrate_tau: need at least 10 scores, got " +
                                   std::to_string(scores.size()));
  require(target_fraction >= 0.0 && target_fraction < 1.0,
          "calibrate_tau: target fraction out of [0,1)");
  for (double s : scores)
    require(s > 0.0 && s < 1.0, "calibrate_tau: score " + std::to_string(s) + " outside (0,1)");

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());

  TauCalibration out;
  if (sorted.front() == sorted.back()) {
    out.tau = sorted.front();
    out.degenerate = true;
    return out;
  }

  const double n = static_cast<double>(sorted.size());
  const auto rank = static_cast<size_t>(std::ceil((1.0 - target_fraction) * n)) - 1;
  out.tau = sorted[std::min(rank, sorted.size() - 1)];
  return out;
}

double detector_score(double probability, ScoreMode mode) {
  return mode == ScoreMode::kProbability ? probability
                                         : std::max(probability, 1.0 - probability);
}

BoolMatrix flag_by_detector(const Matrix& scores, double tau) {
  BoolMatrix flags(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i)
    for (Index l = 0; l < scores.cols(); ++l) flags(i, l) = scores(i, l) > tau;
  return flags;
}

std::vector<int> flag_hard(const std::vector<int>& predictions, const std::vector<int>& gold) {
  require(predictions.size() == gold.size(),
          "flag_hard: " + std::to_string(predictions.size()) + " predictions vs " +
              std::to_string(gold.size()) + " gold labels");
  std::vector<int> hard(predictions.size());
  for (size_t i = 0; i < predictions.size(); ++i) hard[i] = predictions[i] != gold[i] ? 1 : 0;
  return hard;
}

FlagMatrix combine_flags(const BoolMatrix& detector_flags, const std::vector<int>& hard_flags,
                         int epoch) {
  require(static_cast<Index>(hard_flags.size()) == detector_flags.rows(),
          "combine_flags: " + std::to_string(hard_flags.size()) + " hard flags for " +
              std::to_string(detector_flags.rows()) + " rows");
  FlagMatrix out;
  out.epoch = epoch;
  out.flags = detector_flags;
  for (Index i = 0; i < out.flags.rows(); ++i)
    if (hard_flags[static_cast<size_t>(i)] != 0)
      for (Index l = 0; l < out.flags.cols(); ++l) out.flags(i, l) = true;
  return out;
}

double flagged_fraction(const BoolMatrix& flags, Index layer) {
  if (flags.rows() == 0) return 0.0;
  Index count = 0;
  for (Index i = 0; i < flags.rows(); ++i) count += flags(i, layer) ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(flags.rows());
}

}  // namespace mabr
