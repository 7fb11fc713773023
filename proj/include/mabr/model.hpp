#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mabr/autodiff.hpp"
#include "mabr/types.hpp"

namespace mabr {

struct ModelConfig {
  int vocab_size = 200;
  int embed_dim = 32;
  int num_layers = 4;  // L; the per-layer taps are the point of the method
  int hidden_dim = 64;
  int num_classes = 2;
  int seq_len = 16;
  std::uint64_t seed = 1;
};

void validate(const ModelConfig& config);

// One residual feed-forward block: h + tanh(h*w1 + b1)*w2 + b2.
struct EncoderBlock {
  Matrix w1, b1, w2, b2;
};

// Single affine + sigmoid over a detached layer representation.
struct DetectorHead {
  Matrix w, b;
};

// affine-tanh-affine + sigmoid over a gradient-reversed representation.
struct DiscriminatorHead {
  Matrix w1, b1, w2, b2;
};

struct Parameters {
  ModelConfig config;
  Matrix embedding;
  std::vector<EncoderBlock> blocks;
  Matrix classifier_w, classifier_b;
  std::vector<DetectorHead> detectors;          // empty when trained head-less
  std::vector<DiscriminatorHead> discriminators;
};

enum class ParamGroup { kEncoder, kDetector, kDiscriminator };

struct ParamRef {
  std::string name;
  Matrix* array;
  ParamGroup group;
  int layer;  // -1 for encoder-wide arrays
};

// Fixed traversal order shared by init, checkpoints and the optimizer.
std::vector<ParamRef> param_refs(Parameters& params);

// Deterministic init: weights uniform in +-1/sqrt(fan_in), biases zero.
Parameters init_params(const ModelConfig& config, bool with_heads = true);

// Fixed sinusoidal per-position offsets added to token embeddings before
// pooling.
Matrix positional_offsets(int seq_len, int embed_dim);

// Graph-side handles for one forward pass.
struct ParamVars {
  ad::Var embedding;
  struct Block {
    ad::Var w1, b1, w2, b2;
  };
  std::vector<Block> blocks;
  ad::Var classifier_w, classifier_b;
  struct Detector {
    ad::Var w, b;
  };
  std::vector<Detector> detectors;
  struct Discriminator {
    ad::Var w1, b1, w2, b2;
  };
  std::vector<Discriminator> discriminators;
};

// Leaf vars in param_refs order; entries[i] corresponds to param_refs()[i].
struct LiftedParams {
  ParamVars vars;
  std::vector<ad::Var> entries;
};

LiftedParams lift(ad::Tape& tape, const Parameters& params);

struct TraceVars {
  std::vector<ad::Var> pooled;       // L entries, batch x embed_dim
  ad::Var logits;                    // batch x num_classes
  std::vector<ad::Var> bias_prob;    // L entries, batch x 1; empty without heads
  std::vector<ad::Var> domain_prob;  // L entries, batch x 1
};

TraceVars encode_on_tape(ad::Tape& tape, const ParamVars& pv, const ModelConfig& config,
                         const IntMatrix& tokens, double lambda);

// Value-level trace for evaluation paths.
struct ForwardTrace {
  std::vector<Matrix> pooled;
  Matrix logits;
  Matrix bias_prob;    // batch x L
  Matrix domain_prob;  // batch x L
};

ForwardTrace encode(const Parameters& params, const IntMatrix& tokens, double lambda = 1.0);

// Argmax over main logits, ties toward the smaller class index.
std::vector<int> argmax_rows(const Matrix& logits);
std::vector<int> predict(const Parameters& params, const IntMatrix& tokens);

// Self-describing binary container; round-trips bit-exactly.
void save_checkpoint(const Parameters& params, const std::string& path);
Parameters load_checkpoint(const std::string& path);

}  // namespace mabr
