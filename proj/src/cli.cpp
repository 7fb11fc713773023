#include "mabr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mabr/metrics.hpp"

namespace mabr::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void require_usage(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require_usage(in.good(), "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out.good()) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(what + ": " + e.what());
  }
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& what) {
  require_usage(obj.is_object(), what + ": expected a JSON object");
  for (const auto& [key, value] : obj.items())
    require_usage(allowed.count(key) > 0, what + ": unknown key '" + key + "'");
}

template <class T>
void read_key(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

json loss_to_json(const LossBreakdown& loss) {
  json j;
  j["main"] = loss.main;
  j["bias_per_layer"] = loss.bias_per_layer;
  j["adv_per_layer"] = loss.adv_per_layer;
  j["total"] = loss.total;
  return j;
}

json record_to_json(const EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["loss"] = loss_to_json(r.mean_loss);
  j["train_acc"] = r.train_accuracy;
  j["dev_acc"] = r.dev_accuracy;
  j["detector_dev_acc"] = r.detector_dev_accuracy;
  j["discriminator_dev_acc"] = r.discriminator_dev_accuracy;
  j["flagged_fraction"] = r.flagged_fraction;
  return j;
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.mean_loss.main = j.at("loss").at("main").get<double>();
  r.mean_loss.bias_per_layer = j.at("loss").at("bias_per_layer").get<std::vector<double>>();
  r.mean_loss.adv_per_layer = j.at("loss").at("adv_per_layer").get<std::vector<double>>();
  r.mean_loss.total = j.at("loss").at("total").get<double>();
  r.train_accuracy = j.at("train_acc").get<double>();
  r.dev_accuracy = j.at("dev_acc").get<double>();
  r.detector_dev_accuracy = j.at("detector_dev_acc").get<std::vector<double>>();
  r.discriminator_dev_accuracy = j.at("discriminator_dev_acc").get<std::vector<double>>();
  r.flagged_fraction = j.at("flagged_fraction").get<std::vector<double>>();
  return r;
}

json model_to_json(const ModelConfig& m) {
  json j;
  j["vocab_size"] = m.vocab_size;
  j["embed_dim"] = m.embed_dim;
  j["num_layers"] = m.num_layers;
  j["hidden_dim"] = m.hidden_dim;
  j["num_classes"] = m.num_classes;
  j["seq_len"] = m.seq_len;
  j["seed"] = m.seed;
  return j;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["batch_size"] = t.batch_size;
  j["phase1_epochs"] = t.phase1_epochs;
  j["phase2_epochs"] = t.phase2_epochs;
  j["lr_heads"] = t.lr_heads;
  j["lr_encoder"] = t.lr_encoder;
  j["lambda"] = t.lambda;
  j["seed"] = t.seed;
  j["accuracy_stop_ratio"] = t.accuracy_stop_ratio;
  j["target_flagged_fraction"] = t.target_flagged_fraction;
  j["score_mode"] = t.score_mode == ScoreMode::kProbability ? "probability" : "confidence";
  j["multi_layer"] = t.multi_layer;
  j["hard_examples"] = t.hard_examples;
  return j;
}

ModelConfig model_from_json(const json& j) {
  check_keys(j, {"vocab_size", "embed_dim", "num_layers", "hidden_dim", "num_classes", "seq_len",
                 "seed"},
             "model config");
  ModelConfig m;
  read_key(j, "vocab_size", m.vocab_size);
  read_key(j, "embed_dim", m.embed_dim);
  read_key(j, "num_layers", m.num_layers);
  read_key(j, "hidden_dim", m.hidden_dim);
  read_key(j, "num_classes", m.num_classes);
  read_key(j, "seq_len", m.seq_len);
  read_key(j, "seed", m.seed);
  return m;
}

TrainConfig train_from_json(const json& j) {
  check_keys(j,
             {"batch_size", "phase1_epochs", "phase2_epochs", "lr_heads", "lr_encoder", "lambda",
              "seed", "accuracy_stop_ratio", "target_flagged_fraction", "score_mode",
              "multi_layer", "hard_examples"},
             "train config");
  TrainConfig t;
  read_key(j, "batch_size", t.batch_size);
  read_key(j, "phase1_epochs", t.phase1_epochs);
  read_key(j, "phase2_epochs", t.phase2_epochs);
  read_key(j, "lr_heads", t.lr_heads);
  read_key(j, "lr_encoder", t.lr_encoder);
  read_key(j, "lambda", t.lambda);
  read_key(j, "seed", t.seed);
  read_key(j, "accuracy_stop_ratio", t.accuracy_stop_ratio);
  read_key(j, "target_flagged_fraction", t.target_flagged_fraction);
  if (j.contains("score_mode")) {
    const std::string mode = j.at("score_mode").get<std::string>();
    require_usage(mode == "probability" || mode == "confidence",
                  "train config: score_mode must be 'probability' or 'confidence'");
    t.score_mode = mode == "probability" ? ScoreMode::kProbability : ScoreMode::kConfidence;
  }
  read_key(j, "multi_layer", t.multi_layer);
  read_key(j, "hard_examples", t.hard_examples);
  return t;
}

struct LoadedCorpus {
  Dataset train, dev, test, test_anti;
};

Dataset load_split(const std::string& data_dir, const std::string& split) {
  const std::string path = (fs::path(data_dir) / (split + ".jsonl")).string();
  try {
    return read_dataset(path);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

struct RunPaths {
  fs::path root;
  fs::path config() const { return root / "config.json"; }
  fs::path epochs() const { return root / "epochs.jsonl"; }
  fs::path phase1() const { return root / "phase1.json"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path report(const std::string& split) const {
    return root / ("report_" + split + ".json");
  }
};

json report_to_json(const FairnessReport& r) {
  json j;
  j["acc"] = r.accuracy;
  j["tpr_rms"] = r.tpr_rms;
  j["independence"] = r.independence;
  j["sufficiency"] = r.sufficiency;
  j["dto"] = r.dto;
  j["skipped_cells"] = r.skipped_cells;
  return j;
}

EvalTable build_eval_table(const Parameters& params, const std::vector<Sample>& samples,
                           int batch_size) {
  EvalTable table;
  table.num_classes = params.config.num_classes;
  const Index n = static_cast<Index>(samples.size());
  IntMatrix tokens(n, params.config.seq_len);
  for (Index i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    require_usage(static_cast<int>(s.tokens.size()) == params.config.seq_len,
                  "sample " + std::to_string(i) + " has " + std::to_string(s.tokens.size()) +
                      " tokens, model expects " + std::to_string(params.config.seq_len));
    for (int t = 0; t < params.config.seq_len; ++t) tokens(i, t) = s.tokens[static_cast<size_t>(t)];
    table.gold.push_back(s.y);
    table.group.push_back(s.z);
  }
  for (Index begin = 0; begin < n; begin += batch_size) {
    const Index end = std::min(n, begin + batch_size);
    const std::vector<int> preds = predict(params, tokens.middleRows(begin, end - begin));
    table.pred.insert(table.pred.end(), preds.begin(), preds.end());
  }
  return table;
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace

GenConfig parse_gen_config(const std::string& json_text) {
  const json j = parse_json(json_text, "generator config");
  check_keys(j,
             {"n_train", "n_dev", "n_test", "vocab_size", "seq_len", "num_classes", "rho_low",
              "rho_high", "label_z_correlation", "label_noise", "seed"},
             "generator config");
  GenConfig c;
  read_key(j, "n_train", c.n_train);
  read_key(j, "n_dev", c.n_dev);
  read_key(j, "n_test", c.n_test);
  read_key(j, "vocab_size", c.vocab_size);
  read_key(j, "seq_len", c.seq_len);
  read_key(j, "num_classes", c.num_classes);
  read_key(j, "rho_low", c.rho_low);
  read_key(j, "rho_high", c.rho_high);
  read_key(j, "label_z_correlation", c.label_z_correlation);
  read_key(j, "label_noise", c.label_noise);
  read_key(j, "seed", c.seed);
  return c;
}

RunConfig parse_run_config(const std::string& json_text) {
  const json j = parse_json(json_text, "run config");
  check_keys(j, {"model", "train"}, "run config");
  RunConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  return c;
}

void apply_mode(const std::string& mode, TrainConfig& config) {
  if (mode == "finetune" || mode == "mabr") {
    config.multi_layer = true;
    config.hard_examples = true;
  } else if (mode == "mabr-no-multi") {
    config.multi_layer = false;
    config.hard_examples = true;
  } else if (mode == "mabr-no-hard") {
    config.multi_layer = true;
    config.hard_examples = false;
  } else {
    throw UsageError("unknown mode '" + mode +
                     "' (expected finetune, mabr, mabr-no-multi or mabr-no-hard)");
  }
}

TrainView to_train_view(const Dataset& dataset, const ModelConfig& config) {
  TrainView view;
  const Index n = static_cast<Index>(dataset.samples.size());
  view.tokens.resize(n, config.seq_len);
  view.labels.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Sample& s = dataset.samples[static_cast<size_t>(i)];
    require_usage(static_cast<int>(s.tokens.size()) == config.seq_len,
                  dataset.split + " sample " + std::to_string(i) + " has " +
                      std::to_string(s.tokens.size()) + " tokens, model expects " +
                      std::to_string(config.seq_len));
    for (int t = 0; t < config.seq_len; ++t) {
      require_usage(s.tokens[static_cast<size_t>(t)] >= 0 &&
                        s.tokens[static_cast<size_t>(t)] < config.vocab_size,
                    dataset.split + " sample " + std::to_string(i) + ": token id " +
                        std::to_string(s.tokens[static_cast<size_t>(t)]) +
                        " outside vocab of " + std::to_string(config.vocab_size));
      view.tokens(i, t) = s.tokens[static_cast<size_t>(t)];
    }
    require_usage(s.y >= 0 && s.y < config.num_classes,
                  dataset.split + " sample " + std::to_string(i) + ": label " +
                      std::to_string(s.y) + " outside " + std::to_string(config.num_classes) +
                      " classes");
    view.labels.push_back(s.y);
  }
  return view;
}

std::uint64_t fnv1a64_file(const std::string& path, std::uint64_t h) {
  std::ifstream in(path, std::ios::binary);
  require_usage(in.good(), "cannot open " + path);
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string dataset_hash(const std::string& data_dir) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* split : {"train", "dev", "test", "test_anti"})
    h = fnv1a64_file((fs::path(data_dir) / (std::string(split) + ".jsonl")).string(), h);
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

std::string checkpoint_path(const std::string& run_dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
  return (fs::path(run_dir) / "checkpoints" / name).string();
}

std::vector<EpochRecord> read_epoch_log(const std::string& run_dir) {
  const std::string path = (fs::path(run_dir) / "epochs.jsonl").string();
  std::ifstream in(path);
  require_usage(in.good(), "cannot open " + path + " (incomplete run?)");
  std::vector<EpochRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  require_usage(!records.empty(), path + " contains no epoch records");
  return records;
}

// ---- generate ---------------------------------------------------------------

namespace {

json audit_to_json(const AuditReport& a) {
  json j;
  j["marker_given_z0"] = a.marker_given_z[0];
  j["marker_given_z1"] = a.marker_given_z[1];
  j["pattern_given_z0"] = a.pattern_given_z[0];
  j["pattern_given_z1"] = a.pattern_given_z[1];
  j["z1_given_y"] = a.z1_given_y;
  j["bayes_accuracy"] = a.bayes_accuracy;
  return j;
}

json gen_to_json(const GenConfig& c) {
  json j;
  j["n_train"] = c.n_train;
  j["n_dev"] = c.n_dev;
  j["n_test"] = c.n_test;
  j["vocab_size"] = c.vocab_size;
  j["seq_len"] = c.seq_len;
  j["num_classes"] = c.num_classes;
  j["rho_low"] = c.rho_low;
  j["rho_high"] = c.rho_high;
  j["label_z_correlation"] = c.label_z_correlation;
  j["label_noise"] = c.label_noise;
  j["seed"] = c.seed;
  return j;
}

}  // namespace

int cmd_generate(const GenerateOptions& options) {
  return guarded([&] {
    require_usage(!options.out_dir.empty(), "generate: --out is required");
    GenConfig config;
    if (!options.config_path.empty()) config = parse_gen_config(read_file(options.config_path));
    if (options.seed) config.seed = *options.seed;

    Corpus corpus;
    try {
      corpus = generate(config);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    require_usage(!ec && fs::is_directory(options.out_dir),
                  "generate: cannot create output directory " + options.out_dir);

    const fs::path out(options.out_dir);
    write_dataset(corpus.train, (out / "train.jsonl").string());
    write_dataset(corpus.dev, (out / "dev.jsonl").string());
    write_dataset(corpus.test, (out / "test.jsonl").string());
    write_dataset(corpus.test_anti, (out / "test_anti.jsonl").string());
    write_file((out / "gen_config.json").string(), gen_to_json(config).dump(2) + "\n");

    json audits;
    audits["train"] = audit_to_json(audit(corpus.train));
    audits["test_anti"] = audit_to_json(audit(corpus.test_anti));
    write_file((out / "audit.json").string(), audits.dump(2) + "\n");
    std::cout << "generated " << corpus.train.samples.size() << "/" << corpus.dev.samples.size()
              << "/" << corpus.test.samples.size() << "/" << corpus.test_anti.samples.size()
              << " samples (train/dev/test/test_anti) in " << options.out_dir << "\n";
  });
}

// ---- train ------------------------------------------------------------------

int cmd_train(const TrainOptions& options) {
  return guarded([&] {
    require_usage(!options.data_dir.empty(), "train: --data is required");
    require_usage(!options.run_dir.empty(), "train: --run-dir is required");

    RunConfig config;
    if (!options.config_path.empty()) config = parse_run_config(read_file(options.config_path));
    apply_mode(options.mode, config.train);
    if (options.seed) {
      config.train.seed = *options.seed;
      config.model.seed = *options.seed;
    }
    try {
      validate(config.model);
      validate(config.train);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    const Dataset train_set = load_split(options.data_dir, "train");
    const Dataset dev_set = load_split(options.data_dir, "dev");
    const TrainView train_view = to_train_view(train_set, config.model);
    const TrainView dev_view = to_train_view(dev_set, config.model);

    RunPaths paths{fs::path(options.run_dir)};
    std::error_code ec;
    fs::create_directories(paths.checkpoints(), ec);
    require_usage(!ec && fs::is_directory(paths.checkpoints()),
                  "train: cannot create run directory " + options.run_dir);

    json snapshot;
    snapshot["mode"] = options.mode;
    snapshot["data_dir"] = options.data_dir;
    snapshot["dataset_hash"] = dataset_hash(options.data_dir);
    snapshot["model"] = model_to_json(config.model);
    snapshot["train"] = train_to_json(config.train);
    write_file(paths.config().string(), snapshot.dump(2) + "\n");

    std::ofstream log(paths.epochs().string(), std::ios::trunc);
    if (!log.good()) throw std::runtime_error("cannot write " + paths.epochs().string());
    const EpochSink sink = [&](const EpochRecord& record, const Parameters& params) {
      log << record_to_json(record).dump() << "\n";
      log.flush();
      save_checkpoint(params, checkpoint_path(options.run_dir, record.epoch));
    };

    if (options.mode == "finetune") {
      Parameters params = init_params(config.model, /*with_heads=*/false);
      AdamState state;
      const std::vector<EpochRecord> records =
          train_finetune(params, train_view, dev_view, config.train, state, sink);
      const int selected = select_checkpoint(records, config.train.accuracy_stop_ratio);
      std::cout << "finetune run complete; selected epoch " << records[selected].epoch << "\n";
      return;
    }

    Parameters params = init_params(config.model, /*with_heads=*/true);
    const auto phase1_sink = [&](const RunResult& partial, const Parameters& p) {
      json j;
      j["train_acc"] = partial.phase1.train_accuracy;
      j["dev_acc"] = partial.phase1_dev.accuracy;
      j["detector_dev_acc"] = partial.phase1_dev.detector_acc;
      j["discriminator_dev_acc"] = partial.phase1_dev.discriminator_acc;
      j["steps"] = partial.phase1.steps;
      j["tau"] = partial.tau.tau;
      j["tau_degenerate"] = partial.tau.degenerate;
      j["calibration_flagged_fraction"] = partial.calibration_flagged_fraction;
      write_file(paths.phase1().string(), j.dump(2) + "\n");
      save_checkpoint(p, (paths.checkpoints() / "phase1.ckpt").string());
      if (partial.tau.degenerate)
        std::cerr << "warning: degenerate detector scores; tau set to the common value\n";
    };
    const RunResult result =
        train_mabr(params, train_view, dev_view, config.train, sink, phase1_sink);
    std::cout << options.mode << " run complete; tau " << result.tau.tau << ", selected epoch "
              << result.epochs[static_cast<size_t>(result.selected)].epoch << "\n";
  });
}

// ---- eval -------------------------------------------------------------------

namespace {

std::vector<Sample> load_eval_samples(const std::string& data_dir, const std::string& split) {
  if (split == "union") {
    Dataset test = load_split(data_dir, "test");
    const Dataset anti = load_split(data_dir, "test_anti");
    test.samples.insert(test.samples.end(), anti.samples.begin(), anti.samples.end());
    return test.samples;
  }
  return load_split(data_dir, split).samples;
}

}  // namespace

int cmd_eval(const EvalOptions& options) {
  return guarded([&] {
    require_usage(!options.run_dir.empty(), "eval: --run-dir is required");
    const std::set<std::string> splits = {"train", "dev", "test", "test_anti", "union"};
    require_usage(splits.count(options.split) > 0, "eval: unknown split '" + options.split + "'");

    RunPaths paths{fs::path(options.run_dir)};
    const json snapshot = parse_json(read_file(paths.config().string()), "run config snapshot");
    const std::string data_dir = snapshot.at("data_dir").get<std::string>();
    const double stop_ratio = snapshot.at("train").at("accuracy_stop_ratio").get<double>();
    const int batch_size = snapshot.at("train").at("batch_size").get<int>();

    const std::vector<EpochRecord> records = read_epoch_log(options.run_dir);
    const int selected = select_checkpoint(records, stop_ratio);
    const std::string ckpt =
        checkpoint_path(options.run_dir, records[static_cast<size_t>(selected)].epoch);
    if (!fs::exists(ckpt)) throw std::runtime_error("missing checkpoint " + ckpt);
    const Parameters params = load_checkpoint(ckpt);

    // The protected attribute is read here, on the evaluation path only.
    const std::vector<Sample> samples = load_eval_samples(data_dir, options.split);
    const EvalTable table = build_eval_table(params, samples, batch_size);
    const FairnessReport report = evaluate_table(table);
    write_file(paths.report(options.split).string(), report_to_json(report).dump(2) + "\n");

    if (options.per_epoch) {
      json rows = json::array();
      for (const EpochRecord& r : records) {
        const Parameters p = load_checkpoint(checkpoint_path(options.run_dir, r.epoch));
        const FairnessReport fr = evaluate_table(build_eval_table(p, samples, batch_size));
        json row;
        row["epoch"] = r.epoch;
        row["acc"] = fr.accuracy;
        row["tpr_rms"] = fr.tpr_rms;
        row["dto"] = fr.dto;
        rows.push_back(row);
      }
      write_file((paths.root / ("dto_per_epoch_" + options.split + ".json")).string(),
                 rows.dump(2) + "\n");
    }

    std::cout << "epoch " << records[static_cast<size_t>(selected)].epoch << " on "
              << options.split << ": acc " << report.accuracy << ", tpr_rms " << report.tpr_rms
              << ", independence " << report.independence << ", sufficiency "
              << report.sufficiency << ", dto " << report.dto << "\n";
  });
}

// ---- report -----------------------------------------------------------------

namespace {

struct RunSummary {
  std::string mode;
  std::string hash;
  FairnessReport test;
  FairnessReport unioned;
};

FairnessReport report_from_json(const json& j) {
  FairnessReport r;
  r.accuracy = j.at("acc").get<double>();
  r.tpr_rms = j.at("tpr_rms").get<double>();
  r.independence = j.at("independence").get<double>();
  r.sufficiency = j.at("sufficiency").get<double>();
  r.dto = j.at("dto").get<double>();
  r.skipped_cells = j.at("skipped_cells").get<int>();
  return r;
}

}  // namespace

void write_layer_figure(const std::string& path, const std::vector<double>& phase1_detector,
                        const std::vector<double>& phase1_discriminator,
                        const std::vector<EpochRecord>& epochs) {
  const size_t num_layers = phase1_detector.size();
  const size_t points = epochs.size() + 1;  // phase-1 value first
  const double width = 720, height = 420;
  const double left = 60, right = 200, top = 30, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  const auto x_at = [&](size_t k) {
    return left + plot_w * (points == 1 ? 0.0 : static_cast<double>(k) / (points - 1));
  };
  const auto y_at = [&](double acc) { return top + plot_h * (1.0 - acc); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#e377c2"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">"
      << "Per-layer head accuracy on dev (x: phase-1 end, then adversarial epochs)</text>\n";
  // axes
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
      << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    svg << "<text x=\"" << left - 38 << "\" y=\"" << y_at(tick) + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << tick << "</text>\n";
  }

  const auto series = [&](const std::string& label, const std::string& color, bool dashed,
                          const std::vector<double>& values, size_t legend_row) {
    svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\""
        << (dashed ? " stroke-dasharray=\"6 3\"" : "") << " stroke-width=\"1.5\" points=\"";
    for (size_t k = 0; k < values.size(); ++k)
      svg << x_at(k) << "," << y_at(values[k]) << (k + 1 < values.size() ? " " : "");
    svg << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(legend_row);
    svg << "<line x1=\"" << left + plot_w + 10 << "\" y1=\"" << ly << "\" x2=\""
        << left + plot_w + 34 << "\" y2=\"" << ly << "\" stroke=\"" << color << "\""
        << (dashed ? " stroke-dasharray=\"6 3\"" : "") << "/>\n";
    svg << "<text x=\"" << left + plot_w + 40 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"11\">" << label << "</text>\n";
  };

  size_t legend_row = 0;
  for (size_t l = 0; l < num_layers; ++l) {
    std::vector<double> det = {phase1_detector[l]};
    for (const EpochRecord& r : epochs) det.push_back(r.detector_dev_accuracy[l]);
    series("detector layer " + std::to_string(l + 1), kColors[l % 8], false, det, legend_row++);
  }
  for (size_t l = 0; l < num_layers; ++l) {
    std::vector<double> disc = {phase1_discriminator[l]};
    for (const EpochRecord& r : epochs) disc.push_back(r.discriminator_dev_accuracy[l]);
    series("discriminator layer " + std::to_string(l + 1), kColors[l % 8], true, disc,
           legend_row++);
  }
  svg << "</svg>\n";
  write_file(path, svg.str());
}

int cmd_report(const ReportOptions& options) {
  return guarded([&] {
    require_usage(!options.run_dirs.empty(), "report: at least one run directory is required");
    require_usage(!options.out_dir.empty(), "report: --out is required");

    std::vector<RunSummary> runs;
    for (const std::string& dir : options.run_dirs) {
      RunPaths paths{fs::path(dir)};
      const json snapshot = parse_json(read_file(paths.config().string()), dir + "/config.json");
      RunSummary run;
      run.mode = snapshot.at("mode").get<std::string>();
      run.hash = snapshot.at("dataset_hash").get<std::string>();
      require_usage(fs::exists(paths.report("test")) && fs::exists(paths.report("union")),
                    dir + ": run `mabr eval --split test` and `--split union` first");
      run.test = report_from_json(parse_json(read_file(paths.report("test").string()), dir));
      run.unioned = report_from_json(parse_json(read_file(paths.report("union").string()), dir));
      runs.push_back(run);
    }
    for (const RunSummary& run : runs)
      require_usage(run.hash == runs.front().hash,
                    "report: mixed dataset hashes across runs (" + run.hash + " vs " +
                        runs.front().hash + ")");

    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    require_usage(!ec && fs::is_directory(options.out_dir),
                  "report: cannot create output directory " + options.out_dir);

    // Table rows: mode means. Accuracy comes from the in-distribution test
    // split; the fairness columns from test + test_anti so gaps reflect
    // shortcut reliance.
    const std::vector<std::string> order = {"finetune", "mabr", "mabr-no-multi", "mabr-no-hard"};
    std::ostringstream table;
    table << std::setprecision(12);
    table << "mode\truns\tacc\ttpr_rms\tindependence\tsufficiency\n";
    for (const std::string& mode : order) {
      double acc = 0, tpr = 0, ind = 0, suf = 0;
      int count = 0;
      for (const RunSummary& run : runs) {
        if (run.mode != mode) continue;
        acc += run.test.accuracy;
        tpr += run.unioned.tpr_rms;
        ind += run.unioned.independence;
        suf += run.unioned.sufficiency;
        ++count;
      }
      if (count == 0) continue;
      table << mode << "\t" << count << "\t" << acc / count << "\t" << tpr / count << "\t"
            << ind / count << "\t" << suf / count << "\n";
    }
    write_file((fs::path(options.out_dir) / "table.tsv").string(), table.str());

    // Layer figure from the first adversarial run.
    for (const std::string& dir : options.run_dirs) {
      RunPaths paths{fs::path(dir)};
      const json snapshot = parse_json(read_file(paths.config().string()), dir + "/config.json");
      if (snapshot.at("mode").get<std::string>() == "finetune") continue;
      const json phase1 = parse_json(read_file(paths.phase1().string()), dir + "/phase1.json");
      write_layer_figure((fs::path(options.out_dir) / "layers.svg").string(),
                         phase1.at("detector_dev_acc").get<std::vector<double>>(),
                         phase1.at("discriminator_dev_acc").get<std::vector<double>>(),
                         read_epoch_log(dir));
      break;
    }
    std::cout << "report written to " << options.out_dir << "\n";
  });
}

}  // namespace mabr::cli
