#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "mabr/flags.hpp"
#include "mabr/losses.hpp"
#include "mabr/model.hpp"
#include "mabr/types.hpp"

namespace mabr {

struct TrainConfig {
  int batch_size = 64;
  int phase1_epochs = 1;
  int phase2_epochs = 8;  // T
  double lr_heads = 1e-3;
  double lr_encoder = 1e-4;
  double lambda = 1.0;  // gradient-reversal strength
  std::uint64_t seed = 1;
  double accuracy_stop_ratio = 0.98;
  double target_flagged_fraction = 0.30;
  ScoreMode score_mode = ScoreMode::kProbability;
  bool multi_layer = true;    // false: only the final layer's heads participate
  bool hard_examples = true;  // false: flags come from detectors alone
  LossWeights loss_weights;   // ablation-only; defaults are the plain sum
};

void validate(const TrainConfig& config);

// Training-side view of a split: tokens and task labels only. The protected
// attribute never reaches this type.
struct TrainView {
  IntMatrix tokens;
  std::vector<int> labels;
};

struct AdamMoments {
  Matrix m, v;
  long t = 0;
};

struct AdamState {
  std::map<std::string, AdamMoments> moments;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected adaptive-moment update; moments persist across steps.
void adam_update(Matrix& param, const Matrix& grad, AdamMoments& moments, double lr,
                 const AdamState& state);

// Applies one update across all trainable arrays with decoupled learning
// rates: lr_encoder for encoder+classifier, lr_heads for detector and
// discriminator heads. `trainable` filters by name (untrained arrays keep
// their bits and moments).
void optimizer_step(Parameters& params, const std::map<std::string, Matrix>& grads,
                    AdamState& state, const TrainConfig& config,
                    const std::function<bool(const ParamRef&)>& trainable);

struct DevEval {
  double accuracy = 0.0;
  std::vector<double> detector_acc;       // per layer; empty without heads
  std::vector<double> discriminator_acc;  // per layer, vs. the derived flags
};

// Batched evaluation on an immutable snapshot. tau is required only for
// discriminator accuracy (flag prediction); pass NaN-free calibration from
// the run.
DevEval evaluate(const Parameters& params, const TrainView& view, const TrainConfig& config,
                 double tau);

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown mean_loss;
  double train_accuracy = 0.0;
  double dev_accuracy = 0.0;
  std::vector<double> detector_dev_accuracy;
  std::vector<double> discriminator_dev_accuracy;
  std::vector<double> flagged_fraction;  // per layer over the epoch's batches
};

using EpochSink = std::function<void(const EpochRecord&, const Parameters&)>;

struct Phase1Result {
  Matrix detector_scores;  // N x L under the final phase-1 weights
  int steps = 0;
  double train_accuracy = 0.0;
};

// Alg. phase 1: main model and detectors descend their own losses;
// discriminators are untouched (bitwise).
Phase1Result phase1(Parameters& params, const TrainView& train, const TrainConfig& config,
                    AdamState& state);

// Alg. phase 2: per batch, recompute correctness targets and flags with the
// current weights, form the combined objective, and update everything; the
// encoder receives the main gradient minus the reversed adversarial one.
std::vector<EpochRecord> phase2(Parameters& params, const TrainView& train, const TrainView& dev,
                                double tau, const TrainConfig& config, AdamState& state,
                                const EpochSink& sink = nullptr);

// Among epochs with dev accuracy >= ratio * max dev accuracy, the largest
// epoch index (0-based). Consults nothing but task accuracy.
int select_checkpoint(const std::vector<EpochRecord>& records, double ratio = 0.98);

struct RunResult {
  Phase1Result phase1;
  DevEval phase1_dev;  // after phase 1, before any adversarial step
  TauCalibration tau;
  double calibration_flagged_fraction = 0.0;
  std::vector<EpochRecord> epochs;
  int selected = 0;  // 0-based index into epochs
};

// Both phases plus tau calibration between them.
RunResult train_mabr(Parameters& params, const TrainView& train, const TrainView& dev,
                     const TrainConfig& config, const EpochSink& sink = nullptr,
                     const std::function<void(const RunResult&, const Parameters&)>&
                         phase1_sink = nullptr);

// Plain task training (no heads), phase2_epochs epochs, same records and
// selection rule.
std::vector<EpochRecord> train_finetune(Parameters& params, const TrainView& train,
                                        const TrainView& dev, const TrainConfig& config,
                                        AdamState& state, const EpochSink& sink = nullptr);

}  // namespace mabr
