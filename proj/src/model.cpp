#include "mabr/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

namespace mabr {
namespace {

constexpr char kCheckpointMagic[8] = {'M', 'A', 'B', 'R', 'C', 'K', '0', '1'};
constexpr double kPositionalScale = 0.1;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_finite(const Matrix& m, const std::string& name) {
  require(m.allFinite(), name + ": non-finite entries");
}

}  // namespace

void validate(const ModelConfig& c) {
  require(c.vocab_size >= 1 && c.embed_dim >= 1 && c.hidden_dim >= 1 && c.num_classes >= 1 &&
              c.seq_len >= 1,
          "ModelConfig: all counts must be >= 1");
  require(c.num_layers >= 2, "ModelConfig: num_layers must be >= 2");
}

std::vector<ParamRef> param_refs(Parameters& p) {
  std::vector<ParamRef> refs;
  refs.push_back({"embedding", &p.embedding, ParamGroup::kEncoder, -1});
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    const std::string base = "block." + std::to_string(l) + ".";
    refs.push_back({base + "w1", &p.blocks[l].w1, ParamGroup::kEncoder, static_cast<int>(l)});
    refs.push_back({base + "b1", &p.blocks[l].b1, ParamGroup::kEncoder, static_cast<int>(l)});
    refs.push_back({base + "w2", &p.blocks[l].w2, ParamGroup::kEncoder, static_cast<int>(l)});
    refs.push_back({base + "b2", &p.blocks[l].b2, ParamGroup::kEncoder, static_cast<int>(l)});
  }
  refs.push_back({"classifier.w", &p.classifier_w, ParamGroup::kEncoder, -1});
  refs.push_back({"classifier.b", &p.classifier_b, ParamGroup::kEncoder, -1});
  for (size_t l = 0; l < p.detectors.size(); ++l) {
    const std::string base = "detector." + std::to_string(l) + ".";
    refs.push_back({base + "w", &p.detectors[l].w, ParamGroup::kDetector, static_cast<int>(l)});
    refs.push_back({base + "b", &p.detectors[l].b, ParamGroup::kDetector, static_cast<int>(l)});
  }
  for (size_t l = 0; l < p.discriminators.size(); ++l) {
    const std::string base = "discriminator." + std::to_string(l) + ".";
    refs.push_back({base + "w1", &p.discriminators[l].w1, ParamGroup::kDiscriminator,
                    static_cast<int>(l)});
    refs.push_back({base + "b1", &p.discriminators[l].b1, ParamGroup::kDiscriminator,
                    static_cast<int>(l)});
    refs.push_back({base + "w2", &p.discriminators[l].w2, ParamGroup::kDiscriminator,
                    static_cast<int>(l)});
    refs.push_back({base + "b2", &p.discriminators[l].b2, ParamGroup::kDiscriminator,
                    static_cast<int>(l)});
  }
  return refs;
}

Parameters init_params(const ModelConfig& config, bool with_heads) {
  validate(config);
  Parameters p;
  p.config = config;
  p.embedding.resize(config.vocab_size, config.embed_dim);
  p.blocks.resize(static_cast<size_t>(config.num_layers));
  for (EncoderBlock& b : p.blocks) {
    b.w1.resize(config.embed_dim, config.hidden_dim);
    b.b1 = Matrix::Zero(1, config.hidden_dim);
    b.w2.resize(config.hidden_dim, config.embed_dim);
    b.b2 = Matrix::Zero(1, config.embed_dim);
  }
  p.classifier_w.resize(config.embed_dim, config.num_classes);
  p.classifier_b = Matrix::Zero(1, config.num_classes);
  if (with_heads) {
    p.detectors.resize(static_cast<size_t>(config.num_layers));
    for (DetectorHead& d : p.detectors) {
      d.w.resize(config.embed_dim, 1);
      d.b = Matrix::Zero(1, 1);
    }
    // A narrow adversary tracks the moving representation more smoothly than
    // a wide one and still outclasses the affine detectors.
    const int disc_width = std::max(4, config.hidden_dim / 8);
    p.discriminators.resize(static_cast<size_t>(config.num_layers));
    for (DiscriminatorHead& d : p.discriminators) {
      d.w1.resize(config.embed_dim, disc_width);
      d.b1 = Matrix::Zero(1, disc_width);
      d.w2.resize(disc_width, 1);
      d.b2 = Matrix::Zero(1, 1);
    }
  }

  std::mt19937_64 rng(config.seed);
  for (const ParamRef& ref : param_refs(p)) {
    if (ref.name.find(".b") != std::string::npos && ref.array->rows() == 1) continue;  // biases stay zero
    // Embedding rows are looked up, not multiplied through; their fan-in is
    // the vector dimension.
    const double fan_in = ref.name == "embedding" ? static_cast<double>(ref.array->cols())
                                                  : static_cast<double>(ref.array->rows());
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < ref.array->rows(); ++i)
      for (Index j = 0; j < ref.array->cols(); ++j) (*ref.array)(i, j) = dist(rng);
  }
  return p;
}

Matrix positional_offsets(int seq_len, int embed_dim) {
  Matrix offsets(seq_len, embed_dim);
  for (int t = 0; t < seq_len; ++t) {
    for (int k = 0; k < embed_dim; ++k) {
      const double rate = std::pow(10000.0, -static_cast<double>(k - k % 2) / embed_dim);
      offsets(t, k) = kPositionalScale *
                      (k % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate));
    }
  }
  return offsets;
}

LiftedParams lift(ad::Tape& tape, const Parameters& params) {
  LiftedParams lp;
  auto& refs = const_cast<Parameters&>(params);
  for (const ParamRef& ref : param_refs(refs)) lp.entries.push_back(tape.leaf(*ref.array));

  size_t i = 0;
  lp.vars.embedding = lp.entries[i++];
  lp.vars.blocks.resize(params.blocks.size());
  for (auto& b : lp.vars.blocks) {
    b.w1 = lp.entries[i++];
    b.b1 = lp.entries[i++];
    b.w2 = lp.entries[i++];
    b.b2 = lp.entries[i++];
  }
  lp.vars.classifier_w = lp.entries[i++];
  lp.vars.classifier_b = lp.entries[i++];
  lp.vars.detectors.resize(params.detectors.size());
  for (auto& d : lp.vars.detectors) {
    d.w = lp.entries[i++];
    d.b = lp.entries[i++];
  }
  lp.vars.discriminators.resize(params.discriminators.size());
  for (auto& d : lp.vars.discriminators) {
    d.w1 = lp.entries[i++];
    d.b1 = lp.entries[i++];
    d.w2 = lp.entries[i++];
    d.b2 = lp.entries[i++];
  }
  return lp;
}

TraceVars encode_on_tape(ad::Tape& tape, const ParamVars& pv, const ModelConfig& config,
                         const IntMatrix& tokens, double lambda) {
  require(tokens.rows() >= 1, "encode: empty batch");
  require(tokens.cols() == config.seq_len,
          "encode: batch has " + std::to_string(tokens.cols()) + " positions, config.seq_len is " +
              std::to_string(config.seq_len));

  TraceVars trace;
  ad::Var h = ad::embed_pool(pv.embedding, tokens,
                             positional_offsets(config.seq_len, config.embed_dim));
  for (const ParamVars::Block& b : pv.blocks) {
    ad::Var inner = ad::tanh(ad::add_row(ad::matmul(h, b.w1), b.b1));
    h = ad::add(h, ad::add_row(ad::matmul(inner, b.w2), b.b2));
    trace.pooled.push_back(h);
  }
  trace.logits = ad::add_row(ad::matmul(h, pv.classifier_w), pv.classifier_b);

  for (size_t l = 0; l < pv.detectors.size(); ++l) {
    ad::Var rep = ad::detach(trace.pooled[l]);
    trace.bias_prob.push_back(
        ad::sigmoid(ad::add_row(ad::matmul(rep, pv.detectors[l].w), pv.detectors[l].b)));
  }
  for (size_t l = 0; l < pv.discriminators.size(); ++l) {
    const ParamVars::Discriminator& d = pv.discriminators[l];
    ad::Var rep = ad::grad_reverse(trace.pooled[l], lambda);
    ad::Var inner = ad::tanh(ad::add_row(ad::matmul(rep, d.w1), d.b1));
    trace.domain_prob.push_back(ad::sigmoid(ad::add_row(ad::matmul(inner, d.w2), d.b2)));
  }
  return trace;
}

ForwardTrace encode(const Parameters& params, const IntMatrix& tokens, double lambda) {
  ad::Tape tape;
  const LiftedParams lp = lift(tape, params);
  const TraceVars tv = encode_on_tape(tape, lp.vars, params.config, tokens, lambda);

  ForwardTrace trace;
  trace.logits = tv.logits.value();
  check_finite(trace.logits, "encode: logits");
  for (const ad::Var& v : tv.pooled) trace.pooled.push_back(v.value());
  const Index n = tokens.rows();
  trace.bias_prob.resize(n, static_cast<Index>(tv.bias_prob.size()));
  for (size_t l = 0; l < tv.bias_prob.size(); ++l)
    trace.bias_prob.col(static_cast<Index>(l)) = tv.bias_prob[l].value();
  trace.domain_prob.resize(n, static_cast<Index>(tv.domain_prob.size()));
  for (size_t l = 0; l < tv.domain_prob.size(); ++l)
    trace.domain_prob.col(static_cast<Index>(l)) = tv.domain_prob[l].value();
  return trace;
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> labels(static_cast<size_t>(logits.rows()));
  for (Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Index j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
    labels[static_cast<size_t>(i)] = best;
  }
  return labels;
}

std::vector<int> predict(const Parameters& params, const IntMatrix& tokens) {
  ad::Tape tape;
  ad::Var emb = tape.leaf(params.embedding);
  ad::Var h = ad::embed_pool(emb, tokens,
                             positional_offsets(params.config.seq_len, params.config.embed_dim));
  for (const EncoderBlock& b : params.blocks) {
    ad::Var inner = ad::tanh(ad::add_row(ad::matmul(h, tape.leaf(b.w1)), tape.leaf(b.b1)));
    h = ad::add(h, ad::add_row(ad::matmul(inner, tape.leaf(b.w2)), tape.leaf(b.b2)));
  }
  ad::Var logits =
      ad::add_row(ad::matmul(h, tape.leaf(params.classifier_w)), tape.leaf(params.classifier_b));
  return argmax_rows(logits.value());
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(in.good(), "load_checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));

  const ModelConfig& c = params.config;
  for (std::int64_t v : {static_cast<std::int64_t>(c.vocab_size), static_cast<std::int64_t>(c.embed_dim),
                         static_cast<std::int64_t>(c.num_layers), static_cast<std::int64_t>(c.hidden_dim),
                         static_cast<std::int64_t>(c.num_classes), static_cast<std::int64_t>(c.seq_len),
                         static_cast<std::int64_t>(c.seed)})
    write_pod(out, v);

  auto& mut = const_cast<Parameters&>(params);
  const std::vector<ParamRef> refs = param_refs(mut);
  write_pod(out, static_cast<std::uint64_t>(refs.size()));
  for (const ParamRef& ref : refs) {
    write_pod(out, static_cast<std::uint32_t>(ref.name.size()));
    out.write(ref.name.data(), static_cast<std::streamsize>(ref.name.size()));
    write_pod(out, static_cast<std::int64_t>(ref.array->rows()));
    write_pod(out, static_cast<std::int64_t>(ref.array->cols()));
    for (Index i = 0; i < ref.array->rows(); ++i)
      for (Index j = 0; j < ref.array->cols(); ++j) write_pod(out, (*ref.array)(i, j));
  }
  require(out.good(), "save_checkpoint: write failed for " + path);
}

Parameters load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_checkpoint: cannot open " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
          "load_checkpoint: " + path + " is not a checkpoint file");

  ModelConfig c;
  c.vocab_size = static_cast<int>(read_pod<std::int64_t>(in, path));
  c.embed_dim = static_cast<int>(read_pod<std::int64_t>(in, path));
  c.num_layers = static_cast<int>(read_pod<std::int64_t>(in, path));
  c.hidden_dim = static_cast<int>(read_pod<std::int64_t>(in, path));
  c.num_classes = static_cast<int>(read_pod<std::int64_t>(in, path));
  c.seq_len = static_cast<int>(read_pod<std::int64_t>(in, path));
  c.seed = static_cast<std::uint64_t>(read_pod<std::int64_t>(in, path));

  const auto count = read_pod<std::uint64_t>(in, path);
  std::map<std::string, Matrix> arrays;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    require(in.good(), "load_checkpoint: truncated file " + path);
    const auto rows = read_pod<std::int64_t>(in, path);
    const auto cols = read_pod<std::int64_t>(in, path);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = read_pod<double>(in, path);
    arrays.emplace(std::move(name), std::move(m));
  }

  const bool with_heads = arrays.count("detector.0.w") > 0;
  Parameters p = init_params(c, with_heads);
  for (const ParamRef& ref : param_refs(p)) {
    auto it = arrays.find(ref.name);
    require(it != arrays.end(), "load_checkpoint: " + path + " missing array " + ref.name);
    require(it->second.rows() == ref.array->rows() && it->second.cols() == ref.array->cols(),
            "load_checkpoint: " + path + " array " + ref.name + " has shape " +
                shape_str(it->second) + ", expected " + shape_str(*ref.array));
    *ref.array = it->second;
  }
  return p;
}

}  // namespace mabr
