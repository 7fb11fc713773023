#include "mabr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mabr {
namespace {

enum class Phase { kMainOnly, kPhase1, kPhase2 };

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::vector<char> active_layers(const TrainConfig& cfg, int num_layers) {
  std::vector<char> active(static_cast<size_t>(num_layers), 1);
  if (!cfg.multi_layer) {
    std::fill(active.begin(), active.end(), 0);
    active.back() = 1;
  }
  return active;
}

std::vector<int> shuffled_indices(Index n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

IntMatrix gather_rows(const IntMatrix& tokens, const std::vector<int>& idx, size_t begin,
                      size_t end) {
  IntMatrix out(static_cast<Index>(end - begin), tokens.cols());
  for (size_t k = begin; k < end; ++k)
    out.row(static_cast<Index>(k - begin)) = tokens.row(idx[k]);
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<int>& idx,
                               size_t begin, size_t end) {
  std::vector<int> out(end - begin);
  for (size_t k = begin; k < end; ++k) out[k - begin] = labels[static_cast<size_t>(idx[k])];
  return out;
}

Matrix detector_scores_from_probs(const std::vector<ad::Var>& bias_prob, ScoreMode mode) {
  const Index n = bias_prob.empty() ? 0 : bias_prob.front().value().rows();
  Matrix scores(n, static_cast<Index>(bias_prob.size()));
  for (size_t l = 0; l < bias_prob.size(); ++l)
    for (Index i = 0; i < n; ++i)
      scores(i, static_cast<Index>(l)) = detector_score(bias_prob[l].value()(i, 0), mode);
  return scores;
}

std::vector<int> column_as_ints(const BoolMatrix& flags, Index col) {
  std::vector<int> out(static_cast<size_t>(flags.rows()));
  for (Index i = 0; i < flags.rows(); ++i) out[static_cast<size_t>(i)] = flags(i, col) ? 1 : 0;
  return out;
}

struct StepOutcome {
  LossBreakdown breakdown;
  std::vector<int> predictions;
  BoolMatrix flags;  // empty outside phase 2
};

StepOutcome run_step(Parameters& params, const IntMatrix& batch_tokens,
                     const std::vector<int>& batch_labels, const TrainConfig& cfg,
                     AdamState& state, Phase phase, double tau, int epoch) {
  const int num_layers = params.config.num_layers;
  const std::vector<char> active = active_layers(cfg, num_layers);

  ad::Tape tape;
  const LiftedParams lp = lift(tape, params);
  const TraceVars trace = encode_on_tape(tape, lp.vars, params.config, batch_tokens, cfg.lambda);

  if (!trace.logits.value().allFinite())
    throw std::runtime_error("trainer: non-finite logits at epoch " + std::to_string(epoch) +
                             " (diverged parameters?)");

  StepOutcome out;
  out.predictions = argmax_rows(trace.logits.value());

  ad::Var main = main_loss(trace.logits, batch_labels);
  std::vector<ad::Var> bias_terms(static_cast<size_t>(num_layers));
  std::vector<ad::Var> adv_terms(static_cast<size_t>(num_layers));

  const bool heads = !params.detectors.empty();
  if (phase != Phase::kMainOnly && heads) {
    for (size_t l = 0; l < trace.bias_prob.size(); ++l)
      if (!trace.bias_prob[l].value().allFinite() || !trace.domain_prob[l].value().allFinite())
        throw std::runtime_error("trainer: non-finite head outputs at epoch " +
                                 std::to_string(epoch) + " (diverged parameters?)");
    const std::vector<int> correct = correctness_targets(out.predictions, batch_labels);
    for (int l = 0; l < num_layers; ++l)
      if (active[static_cast<size_t>(l)])
        bias_terms[static_cast<size_t>(l)] =
            bias_loss_layer(trace.bias_prob[static_cast<size_t>(l)], correct);

    if (phase == Phase::kPhase2) {
      const Matrix scores = detector_scores_from_probs(trace.bias_prob, cfg.score_mode);
      const BoolMatrix detector_flags = flag_by_detector(scores, tau);
      const std::vector<int> hard =
          cfg.hard_examples ? flag_hard(out.predictions, batch_labels)
                            : std::vector<int>(batch_labels.size(), 0);
      out.flags = combine_flags(detector_flags, hard, epoch).flags;
      for (int l = 0; l < num_layers; ++l)
        if (active[static_cast<size_t>(l)])
          adv_terms[static_cast<size_t>(l)] = adv_loss_layer(
              trace.domain_prob[static_cast<size_t>(l)], column_as_ints(out.flags, l));
    }
  }

  const TotalLoss total = total_loss(main, bias_terms, adv_terms, cfg.loss_weights);
  out.breakdown = total.breakdown;
  if (!std::isfinite(out.breakdown.total))
    throw std::runtime_error("trainer: non-finite loss at epoch " + std::to_string(epoch));

  tape.backward(total.node);

  std::map<std::string, Matrix> grads;
  const std::vector<ParamRef> refs = param_refs(params);
  for (size_t i = 0; i < refs.size(); ++i) grads.emplace(refs[i].name, lp.entries[i].grad());

  const auto trainable = [&](const ParamRef& ref) {
    if (ref.group == ParamGroup::kEncoder) return true;
    if (phase == Phase::kMainOnly) return false;
    if (!active[static_cast<size_t>(ref.layer)]) return false;
    if (ref.group == ParamGroup::kDetector) return true;
    return phase == Phase::kPhase2;  // discriminators move only in phase 2
  };
  optimizer_step(params, grads, state, cfg, trainable);
  return out;
}

struct EpochStats {
  LossBreakdown sum;
  int batches = 0;
  Index correct = 0;
  Index seen = 0;
  std::vector<double> flagged;  // per-layer counts

  void add(const StepOutcome& step, const std::vector<int>& labels, int num_layers) {
    if (sum.bias_per_layer.empty()) {
      sum.bias_per_layer.assign(static_cast<size_t>(num_layers), 0.0);
      sum.adv_per_layer.assign(static_cast<size_t>(num_layers), 0.0);
      flagged.assign(static_cast<size_t>(num_layers), 0.0);
    }
    sum.main += step.breakdown.main;
    sum.total += step.breakdown.total;
    for (size_t l = 0; l < step.breakdown.bias_per_layer.size(); ++l) {
      sum.bias_per_layer[l] += step.breakdown.bias_per_layer[l];
      sum.adv_per_layer[l] += step.breakdown.adv_per_layer[l];
    }
    ++batches;
    for (size_t i = 0; i < labels.size(); ++i)
      if (step.predictions[i] == labels[i]) ++correct;
    seen += static_cast<Index>(labels.size());
    if (step.flags.size() > 0)
      for (Index l = 0; l < step.flags.cols(); ++l)
        for (Index i = 0; i < step.flags.rows(); ++i)
          if (step.flags(i, l)) flagged[static_cast<size_t>(l)] += 1.0;
  }

  LossBreakdown mean() const {
    LossBreakdown m = sum;
    const double n = std::max(1, batches);
    m.main /= n;
    m.total /= n;
    for (double& v : m.bias_per_layer) v /= n;
    for (double& v : m.adv_per_layer) v /= n;
    return m;
  }

  double accuracy() const { return seen == 0 ? 0.0 : static_cast<double>(correct) / seen; }

  std::vector<double> flagged_fractions() const {
    std::vector<double> out = flagged;
    for (double& v : out) v /= std::max<Index>(1, seen);
    return out;
  }
};

}  // namespace

void validate(const TrainConfig& c) {
  require(c.batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(c.phase1_epochs >= 1 && c.phase2_epochs >= 1, "TrainConfig: epochs must be >= 1");
  // lr_encoder == 0 freezes the encoder; used by diagnostics.
  require(c.lr_heads > 0.0 && c.lr_encoder >= 0.0,
          "TrainConfig: lr_heads must be positive, lr_encoder non-negative");
  require(c.accuracy_stop_ratio > 0.0 && c.accuracy_stop_ratio <= 1.0,
          "TrainConfig: accuracy_stop_ratio outside (0,1]");
  require(c.lambda > 0.0, "TrainConfig: lambda must be positive");
  require(c.target_flagged_fraction >= 0.0 && c.target_flagged_fraction < 1.0,
          "TrainConfig: target_flagged_fraction outside [0,1)");
}

void adam_update(Matrix& param, const Matrix& grad, AdamMoments& moments, double lr,
                 const AdamState& state) {
  if (!grad.allFinite()) throw std::runtime_error("adam_update: non-finite gradient");
  if (moments.t == 0) {
    moments.m = Matrix::Zero(param.rows(), param.cols());
    moments.v = Matrix::Zero(param.rows(), param.cols());
  }
  ++moments.t;
  moments.m = state.beta1 * moments.m + (1.0 - state.beta1) * grad;
  moments.v = state.beta2 * moments.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(moments.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(moments.t));
  const Matrix m_hat = moments.m / bc1;
  const Matrix v_hat = moments.v / bc2;
  param.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + state.epsilon);
}

void optimizer_step(Parameters& params, const std::map<std::string, Matrix>& grads,
                    AdamState& state, const TrainConfig& config,
                    const std::function<bool(const ParamRef&)>& trainable) {
  for (const ParamRef& ref : param_refs(params)) {
    if (trainable && !trainable(ref)) continue;
    const auto it = grads.find(ref.name);
    require(it != grads.end(), "optimizer_step: missing gradient for " + ref.name);
    const double lr = ref.group == ParamGroup::kEncoder ? config.lr_encoder : config.lr_heads;
    adam_update(*ref.array, it->second, state.moments[ref.name], lr, state);
  }
}

DevEval evaluate(const Parameters& params, const TrainView& view, const TrainConfig& config,
                 double tau) {
  DevEval eval;
  const int num_layers = params.config.num_layers;
  const bool heads = !params.detectors.empty();
  if (heads) {
    eval.detector_acc.assign(static_cast<size_t>(num_layers), 0.0);
    eval.discriminator_acc.assign(static_cast<size_t>(num_layers), 0.0);
  }

  const Index n = view.tokens.rows();
  Index correct = 0;
  std::vector<Index> det_hits(static_cast<size_t>(num_layers), 0);
  std::vector<Index> disc_hits(static_cast<size_t>(num_layers), 0);

  for (Index begin = 0; begin < n; begin += config.batch_size) {
    const Index end = std::min(n, begin + config.batch_size);
    const IntMatrix chunk = view.tokens.middleRows(begin, end - begin);
    std::vector<int> gold(view.labels.begin() + begin, view.labels.begin() + end);

    if (!heads) {
      const std::vector<int> preds = predict(params, chunk);
      for (size_t i = 0; i < gold.size(); ++i)
        if (preds[i] == gold[i]) ++correct;
      continue;
    }

    const ForwardTrace trace = encode(params, chunk, config.lambda);
    const std::vector<int> preds = argmax_rows(trace.logits);
    const std::vector<int> s = correctness_targets(preds, gold);
    for (size_t i = 0; i < gold.size(); ++i)
      if (preds[i] == gold[i]) ++correct;

    Matrix scores(trace.bias_prob.rows(), trace.bias_prob.cols());
    for (Index i = 0; i < scores.rows(); ++i)
      for (Index l = 0; l < scores.cols(); ++l)
        scores(i, l) = detector_score(trace.bias_prob(i, l), config.score_mode);
    const BoolMatrix det_flags = flag_by_detector(scores, tau);
    const std::vector<int> hard =
        config.hard_examples ? flag_hard(preds, gold) : std::vector<int>(gold.size(), 0);
    const BoolMatrix flags = combine_flags(det_flags, hard, 0).flags;

    for (Index l = 0; l < static_cast<Index>(num_layers); ++l) {
      for (Index i = 0; i < chunk.rows(); ++i) {
        const int predicted_correct = trace.bias_prob(i, l) > 0.5 ? 1 : 0;
        if (predicted_correct == s[static_cast<size_t>(i)]) ++det_hits[static_cast<size_t>(l)];
        const int predicted_flag = trace.domain_prob(i, l) > 0.5 ? 1 : 0;
        if (predicted_flag == (flags(i, l) ? 1 : 0)) ++disc_hits[static_cast<size_t>(l)];
      }
    }
  }

  eval.accuracy = n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n);
  if (heads) {
    for (size_t l = 0; l < static_cast<size_t>(num_layers); ++l) {
      eval.detector_acc[l] = static_cast<double>(det_hits[l]) / static_cast<double>(n);
      eval.discriminator_acc[l] = static_cast<double>(disc_hits[l]) / static_cast<double>(n);
    }
  }
  return eval;
}

Phase1Result phase1(Parameters& params, const TrainView& train, const TrainConfig& config,
                    AdamState& state) {
  validate(config);
  require(train.tokens.rows() >= 1, "phase1: empty training split");
  require(!params.detectors.empty(), "phase1: parameters carry no detector heads");

  Phase1Result result;
  for (int epoch = 1; epoch <= config.phase1_epochs; ++epoch) {
    EpochStats stats;
    const std::vector<int> idx =
        shuffled_indices(train.tokens.rows(), mix_seed(config.seed, 0x1000u + epoch));
    for (size_t begin = 0; begin < idx.size(); begin += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(idx.size(), begin + static_cast<size_t>(config.batch_size));
      const IntMatrix btok = gather_rows(train.tokens, idx, begin, end);
      const std::vector<int> blab = gather_labels(train.labels, idx, begin, end);
      stats.add(run_step(params, btok, blab, config, state, Phase::kPhase1, 0.0, epoch), blab,
                params.config.num_layers);
      ++result.steps;
    }
    result.train_accuracy = stats.accuracy();
  }

  // Clean pass with the final weights; these scores feed tau calibration.
  const Index n = train.tokens.rows();
  result.detector_scores.resize(n, params.config.num_layers);
  for (Index begin = 0; begin < n; begin += config.batch_size) {
    const Index end = std::min(n, begin + config.batch_size);
    const ForwardTrace trace =
        encode(params, train.tokens.middleRows(begin, end - begin), config.lambda);
    for (Index i = 0; i < end - begin; ++i)
      for (Index l = 0; l < result.detector_scores.cols(); ++l)
        result.detector_scores(begin + i, l) =
            detector_score(trace.bias_prob(i, l), config.score_mode);
  }
  return result;
}

std::vector<EpochRecord> phase2(Parameters& params, const TrainView& train, const TrainView& dev,
                                double tau, const TrainConfig& config, AdamState& state,
                                const EpochSink& sink) {
  validate(config);
  require(!params.detectors.empty(), "phase2: parameters carry no heads");

  std::vector<EpochRecord> records;
  for (int epoch = 1; epoch <= config.phase2_epochs; ++epoch) {
    EpochStats stats;
    const std::vector<int> idx =
        shuffled_indices(train.tokens.rows(), mix_seed(config.seed, 0x2000u + epoch));
    for (size_t begin = 0; begin < idx.size(); begin += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(idx.size(), begin + static_cast<size_t>(config.batch_size));
      const IntMatrix btok = gather_rows(train.tokens, idx, begin, end);
      const std::vector<int> blab = gather_labels(train.labels, idx, begin, end);
      stats.add(run_step(params, btok, blab, config, state, Phase::kPhase2, tau, epoch), blab,
                params.config.num_layers);
    }

    const DevEval dev_eval = evaluate(params, dev, config, tau);
    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = stats.mean();
    record.train_accuracy = stats.accuracy();
    record.dev_accuracy = dev_eval.accuracy;
    record.detector_dev_accuracy = dev_eval.detector_acc;
    record.discriminator_dev_accuracy = dev_eval.discriminator_acc;
    record.flagged_fraction = stats.flagged_fractions();
    records.push_back(record);
    if (sink) sink(record, params);
  }
  return records;
}

int select_checkpoint(const std::vector<EpochRecord>& records, double ratio) {
  require(!records.empty(), "select_checkpoint: no records");
  double best = records.front().dev_accuracy;
  for (const EpochRecord& r : records) best = std::max(best, r.dev_accuracy);
  const double threshold = ratio * best;
  int selected = 0;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].dev_accuracy >= threshold) selected = static_cast<int>(i);
  return selected;
}

RunResult train_mabr(Parameters& params, const TrainView& train, const TrainView& dev,
                     const TrainConfig& config, const EpochSink& sink,
                     const std::function<void(const RunResult&, const Parameters&)>& phase1_sink) {
  validate(config);
  AdamState state;
  RunResult result;
  result.phase1 = phase1(params, train, config, state);

  // Pool phase-1 scores over the layers that participate in this run.
  const std::vector<char> active = active_layers(config, params.config.num_layers);
  std::vector<double> pooled;
  for (Index l = 0; l < result.phase1.detector_scores.cols(); ++l) {
    if (!active[static_cast<size_t>(l)]) continue;
    for (Index i = 0; i < result.phase1.detector_scores.rows(); ++i)
      pooled.push_back(result.phase1.detector_scores(i, l));
  }
  result.tau = calibrate_tau(pooled, config.target_flagged_fraction);
  Index over = 0;
  for (double s : pooled)
    if (s > result.tau.tau) ++over;
  result.calibration_flagged_fraction =
      pooled.empty() ? 0.0 : static_cast<double>(over) / static_cast<double>(pooled.size());

  result.phase1_dev = evaluate(params, dev, config, result.tau.tau);
  if (phase1_sink) phase1_sink(result, params);

  result.epochs = phase2(params, train, dev, result.tau.tau, config, state, sink);
  result.selected = select_checkpoint(result.epochs, config.accuracy_stop_ratio);
  return result;
}

std::vector<EpochRecord> train_finetune(Parameters& params, const TrainView& train,
                                        const TrainView& dev, const TrainConfig& config,
                                        AdamState& state, const EpochSink& sink) {
  validate(config);
  require(params.detectors.empty() && params.discriminators.empty(),
          "train_finetune: expected head-less parameters");

  std::vector<EpochRecord> records;
  for (int epoch = 1; epoch <= config.phase2_epochs; ++epoch) {
    EpochStats stats;
    const std::vector<int> idx =
        shuffled_indices(train.tokens.rows(), mix_seed(config.seed, 0x3000u + epoch));
    for (size_t begin = 0; begin < idx.size(); begin += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(idx.size(), begin + static_cast<size_t>(config.batch_size));
      const IntMatrix btok = gather_rows(train.tokens, idx, begin, end);
      const std::vector<int> blab = gather_labels(train.labels, idx, begin, end);
      stats.add(run_step(params, btok, blab, config, state, Phase::kMainOnly, 0.0, epoch), blab,
                params.config.num_layers);
    }

    const DevEval dev_eval = evaluate(params, dev, config, 0.5);
    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = stats.mean();
    record.train_accuracy = stats.accuracy();
    record.dev_accuracy = dev_eval.accuracy;
    records.push_back(record);
    if (sink) sink(record, params);
  }
  return records;
}

}  // namespace mabr
