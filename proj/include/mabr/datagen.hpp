#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mabr/types.hpp"

namespace mabr {

struct GenConfig {
  int n_train = 20000;
  int n_dev = 2000;
  int n_test = 2000;  // test and test_anti each
  int vocab_size = 200;
  int seq_len = 16;
  int num_classes = 2;
  double rho_low = 0.9;   // P(marker token | z=1); P(marker | z=0) = 1 - rho_low
  double rho_high = 0.9;  // same for the compositional token pair
  double label_z_correlation = 0.8;  // P(z = y mod 2)
  double label_noise = 0.05;
  std::uint64_t seed = 1;
};

struct Sample {
  std::vector<int> tokens;
  int y = 0;
  int z = 0;  // visible to evaluation and reporting only
};

struct Dataset {
  std::vector<Sample> samples;
  std::string split;
  GenConfig config;  // echo of the generating config; empty-default after read
};

struct Corpus {
  Dataset train, dev, test, test_anti;
};

// Reserved token ids. The marker is the word-level spurious channel; the
// ordered (pattern_a, pattern_b) pair spanning distant positions is the
// compositional one.
constexpr int kMarkerToken = 0;
constexpr int kPatternTokenA = 1;
constexpr int kPatternTokenB = 2;

struct AuditReport {
  std::array<double, 2> marker_given_z{};   // P(marker | z=0), P(marker | z=1)
  std::array<double, 2> pattern_given_z{};  // same for the pair
  std::vector<double> z1_given_y;           // P(z=1 | y) per class
  double bayes_accuracy = 0.0;  // core-token oracle vs. emitted labels
};

Corpus generate(const GenConfig& config);

AuditReport audit(const Dataset& dataset);

// Core-token oracle: majority vote over class evidence ranges, ties toward
// the smaller class.
int bayes_oracle_predict(const std::vector<int>& tokens, const GenConfig& config);

bool has_pattern(const std::vector<int>& tokens, int seq_len);

// One JSON record per line with fields {tokens, y, z, split}.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

}  // namespace mabr
