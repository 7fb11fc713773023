#include "mabr/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace mabr {
namespace {

using nlohmann::json;

// Core-signal shape. Strong samples spread the class signal over many
// evidence tokens. Weak samples instead carry one token from each of two
// adjacent class ranges and encode the class in their relative order, which
// a position-aware oracle reads but a pooled bag-of-tokens view cannot; on
// those samples a bag-of-tokens classifier has only the spurious channels to
// lean on.
constexpr double kWeakFraction = 0.28;
constexpr int kStrongEvidence = 12;
constexpr double kEvidenceQuality = 0.90;
constexpr double kOrientationQuality = 0.97;

constexpr int kEvidenceBase = 3;  // ids below: marker and the spurious pair

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct VocabLayout {
  int per_class = 0;  // evidence tokens per class
  int filler_base = 0;
  int filler_count = 0;
};

VocabLayout layout(const GenConfig& c) {
  VocabLayout v;
  v.per_class = (c.vocab_size - kEvidenceBase) / (2 * c.num_classes);
  v.filler_base = kEvidenceBase + v.per_class * c.num_classes;
  v.filler_count = c.vocab_size - v.filler_base;
  return v;
}

void validate(const GenConfig& c) {
  require(c.n_train >= 1 && c.n_dev >= 1 && c.n_test >= 1, "datagen: split sizes must be >= 1");
  require(c.num_classes >= 2, "datagen: need at least 2 classes");
  require(c.seq_len >= 8, "datagen: seq_len " + std::to_string(c.seq_len) +
                              " too small to host the compositional pattern (need >= 8)");
  require(c.rho_low >= 0.5 && c.rho_low <= 1.0 && c.rho_high >= 0.5 && c.rho_high <= 1.0 &&
              c.label_z_correlation >= 0.5 && c.label_z_correlation <= 1.0,
          "datagen: correlations must lie in [0.5, 1.0]");
  require(c.label_noise >= 0.0 && c.label_noise <= 0.5, "datagen: label_noise outside [0, 0.5]");
  const VocabLayout v = layout(c);
  require(v.per_class >= 2 && v.filler_count >= 2,
          "datagen: vocab_size " + std::to_string(c.vocab_size) + " too small for " +
              std::to_string(c.num_classes) + " classes");
}

Sample make_sample(const GenConfig& c, const VocabLayout& v, std::uint64_t sample_seed,
                   bool anti) {
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Sample s;
  const int y_star = static_cast<int>(rng() % static_cast<std::uint64_t>(c.num_classes));
  s.y = y_star;
  if (unit(rng) < c.label_noise) {
    const int shift = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(c.num_classes - 1));
    s.y = (y_star + shift) % c.num_classes;
  }

  const int base = s.y % 2;
  const bool aligned = unit(rng) < c.label_z_correlation;
  s.z = anti ? (aligned ? 1 - base : base) : (aligned ? base : 1 - base);

  const bool marker = unit(rng) < (s.z == 1 ? c.rho_low : 1.0 - c.rho_low);
  const bool pattern = unit(rng) < (s.z == 1 ? c.rho_high : 1.0 - c.rho_high);

  const bool weak = unit(rng) < kWeakFraction;
  const int budget = c.seq_len - (pattern ? 2 : 0) - (marker ? 1 : 0);
  const int n_evidence = std::min(weak ? 2 : kStrongEvidence, budget);

  s.tokens.assign(static_cast<size_t>(c.seq_len), -1);
  std::vector<int> free_pos(static_cast<size_t>(c.seq_len));
  std::iota(free_pos.begin(), free_pos.end(), 0);

  if (pattern) {
    const int quarter = c.seq_len / 4;
    const int p1 = static_cast<int>(rng() % static_cast<std::uint64_t>(quarter));
    const int p2 = c.seq_len - quarter +
                   static_cast<int>(rng() % static_cast<std::uint64_t>(quarter));
    s.tokens[static_cast<size_t>(p1)] = kPatternTokenA;
    s.tokens[static_cast<size_t>(p2)] = kPatternTokenB;
    free_pos.erase(std::remove_if(free_pos.begin(), free_pos.end(),
                                  [&](int p) { return p == p1 || p == p2; }),
                   free_pos.end());
  }
  std::shuffle(free_pos.begin(), free_pos.end(), rng);

  size_t cursor = 0;
  if (marker) s.tokens[static_cast<size_t>(free_pos[cursor++])] = kMarkerToken;
  const auto draw_from_range = [&](int cls) {
    return kEvidenceBase + cls * v.per_class +
           static_cast<int>(rng() % static_cast<std::uint64_t>(v.per_class));
  };
  if (weak && n_evidence >= 2) {
    // One token from the class's own range, one from the neighbouring range;
    // their order carries the class.
    const int own = draw_from_range(y_star);
    const int other = draw_from_range((y_star + 1) % c.num_classes);
    int p_own = free_pos[cursor++];
    int p_other = free_pos[cursor++];
    const bool own_first = unit(rng) < kOrientationQuality;
    if ((p_own < p_other) != own_first) std::swap(p_own, p_other);
    s.tokens[static_cast<size_t>(p_own)] = own;
    s.tokens[static_cast<size_t>(p_other)] = other;
  } else {
    for (int e = 0; e < n_evidence; ++e) {
      int cls = y_star;  // evidence reflects the pre-noise class
      if (unit(rng) >= kEvidenceQuality) {
        const int shift =
            1 + static_cast<int>(rng() % static_cast<std::uint64_t>(c.num_classes - 1));
        cls = (y_star + shift) % c.num_classes;
      }
      s.tokens[static_cast<size_t>(free_pos[cursor++])] = draw_from_range(cls);
    }
  }
  for (; cursor < free_pos.size(); ++cursor) {
    const int tok = v.filler_base + static_cast<int>(rng() % static_cast<std::uint64_t>(v.filler_count));
    s.tokens[static_cast<size_t>(free_pos[cursor])] = tok;
  }
  return s;
}

Dataset make_split(const GenConfig& c, const VocabLayout& v, const std::string& split, int count,
                   std::uint64_t salt, bool anti) {
  Dataset d;
  d.split = split;
  d.config = c;
  d.samples.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    d.samples.push_back(
        make_sample(c, v, mix_seed(c.seed, salt * 0x100000000ULL + static_cast<std::uint64_t>(i)),
                    anti));
  return d;
}

}  // namespace

Corpus generate(const GenConfig& config) {
  validate(config);
  const VocabLayout v = layout(config);
  Corpus corpus;
  corpus.train = make_split(config, v, "train", config.n_train, 1, false);
  corpus.dev = make_split(config, v, "dev", config.n_dev, 2, false);
  corpus.test = make_split(config, v, "test", config.n_test, 3, false);
  corpus.test_anti = make_split(config, v, "test_anti", config.n_test, 4, true);
  return corpus;
}

int bayes_oracle_predict(const std::vector<int>& tokens, const GenConfig& config) {
  const VocabLayout v = layout(config);
  std::vector<int> counts(static_cast<size_t>(config.num_classes), 0);
  int total = 0, first_range = -1;
  for (int t : tokens) {
    if (t < kEvidenceBase || t >= v.filler_base) continue;
    const int range = (t - kEvidenceBase) / v.per_class;
    ++counts[static_cast<size_t>(range)];
    ++total;
    if (first_range < 0) first_range = range;
  }
  // Weak shape: one token from each of two adjacent ranges; the earlier one
  // names the class.
  if (total == 2) {
    int lo = -1, hi = -1;
    for (int c = 0; c < config.num_classes; ++c) {
      if (counts[static_cast<size_t>(c)] == 1) (lo < 0 ? lo : hi) = c;
      if (counts[static_cast<size_t>(c)] == 2) lo = hi = -2;  // same range twice: not weak-shaped
    }
    if (lo >= 0 && hi >= 0 &&
        ((hi == (lo + 1) % config.num_classes) || (lo == (hi + 1) % config.num_classes)))
      return first_range;
  }
  int best = 0;
  for (int c = 1; c < config.num_classes; ++c)
    if (counts[static_cast<size_t>(c)] > counts[static_cast<size_t>(best)]) best = c;
  return best;
}

bool has_pattern(const std::vector<int>& tokens, int seq_len) {
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != kPatternTokenA) continue;
    for (size_t j = i + static_cast<size_t>(seq_len / 2); j < tokens.size(); ++j)
      if (tokens[j] == kPatternTokenB) return true;
  }
  return false;
}

AuditReport audit(const Dataset& dataset) {
  require(!dataset.samples.empty(), "audit: empty dataset");
  const GenConfig& c = dataset.config;

  AuditReport r;
  std::array<int, 2> z_count{0, 0};
  std::array<int, 2> marker_count{0, 0};
  std::array<int, 2> pattern_count{0, 0};
  int num_classes = c.num_classes;
  for (const Sample& s : dataset.samples) num_classes = std::max(num_classes, s.y + 1);
  std::vector<int> y_count(static_cast<size_t>(num_classes), 0);
  std::vector<int> z1_given_y(static_cast<size_t>(num_classes), 0);
  int bayes_hits = 0;

  for (const Sample& s : dataset.samples) {
    ++z_count[static_cast<size_t>(s.z)];
    const bool marker = std::find(s.tokens.begin(), s.tokens.end(), kMarkerToken) != s.tokens.end();
    if (marker) ++marker_count[static_cast<size_t>(s.z)];
    if (has_pattern(s.tokens, static_cast<int>(s.tokens.size()))) ++pattern_count[static_cast<size_t>(s.z)];
    ++y_count[static_cast<size_t>(s.y)];
    if (s.z == 1) ++z1_given_y[static_cast<size_t>(s.y)];
    if (c.num_classes >= 2 && bayes_oracle_predict(s.tokens, c) == s.y) ++bayes_hits;
  }

  for (int z = 0; z < 2; ++z) {
    const double n = std::max(1, z_count[static_cast<size_t>(z)]);
    r.marker_given_z[static_cast<size_t>(z)] = marker_count[static_cast<size_t>(z)] / n;
    r.pattern_given_z[static_cast<size_t>(z)] = pattern_count[static_cast<size_t>(z)] / n;
  }
  r.z1_given_y.resize(static_cast<size_t>(num_classes), 0.0);
  for (int y = 0; y < num_classes; ++y)
    if (y_count[static_cast<size_t>(y)] > 0)
      r.z1_given_y[static_cast<size_t>(y)] =
          static_cast<double>(z1_given_y[static_cast<size_t>(y)]) / y_count[static_cast<size_t>(y)];
  r.bayes_accuracy = static_cast<double>(bayes_hits) / static_cast<double>(dataset.samples.size());
  return r;
}

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_dataset: cannot open " + path);
  for (const Sample& s : dataset.samples) {
    json row;
    row["tokens"] = s.tokens;
    row["y"] = s.y;
    row["z"] = s.z;
    row["split"] = dataset.split;
    out << row.dump() << "\n";
  }
  require(out.good(), "write_dataset: write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "read_dataset: cannot open " + path);

  Dataset d;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw std::invalid_argument("read_dataset: " + path + " line " + std::to_string(line_no) +
                                  ": " + e.what());
    }
    for (const char* field : {"tokens", "y", "z", "split"})
      require(row.contains(field), "read_dataset: " + path + " line " + std::to_string(line_no) +
                                       ": missing field '" + field + "'");
    Sample s;
    try {
      s.tokens = row["tokens"].get<std::vector<int>>();
      s.y = row["y"].get<int>();
      s.z = row["z"].get<int>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("read_dataset: " + path + " line " + std::to_string(line_no) +
                                  ": " + e.what());
    }
    const std::string split = row["split"].get<std::string>();
    if (d.samples.empty()) d.split = split;
    require(split == d.split, "read_dataset: " + path + " line " + std::to_string(line_no) +
                                  ": split '" + split + "' differs from '" + d.split + "'");
    d.samples.push_back(std::move(s));
  }
  require(!d.samples.empty(), "read_dataset: " + path + " is an empty dataset");
  return d;
}

}  // namespace mabr
