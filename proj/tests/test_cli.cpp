#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mabr/cli.hpp"

using namespace mabr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("mabr_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

// Small corpus + model so a full train run takes a couple of seconds.
void write_small_configs(const TempDir& dir, std::string* gen_path, std::string* run_path) {
  *gen_path = dir.sub("gen.json");
  write_all(*gen_path, R"({"n_train":768,"n_dev":256,"n_test":256,"vocab_size":80,
    "seq_len":12,"num_classes":2,"rho_low":0.9,"rho_high":0.9,
    "label_z_correlation":0.8,"label_noise":0.05,"seed":3})");
  *run_path = dir.sub("run.json");
  write_all(*run_path, R"({"model":{"vocab_size":80,"embed_dim":12,"num_layers":2,
    "hidden_dim":16,"num_classes":2,"seq_len":12,"seed":3},
    "train":{"batch_size":64,"phase1_epochs":1,"phase2_epochs":2,"lr_heads":0.001,
    "lr_encoder":0.0003,"lambda":1.0,"seed":3,"accuracy_stop_ratio":0.98,
    "target_flagged_fraction":0.3,"score_mode":"probability",
    "multi_layer":true,"hard_examples":true}})");
}

int generate_into(const TempDir& dir, const std::string& gen_path, const std::string& sub) {
  cli::GenerateOptions gen;
  gen.config_path = gen_path;
  gen.out_dir = dir.sub(sub);
  return cli::cmd_generate(gen);
}

int train_into(const TempDir& dir, const std::string& run_path, const std::string& data,
               const std::string& run_sub, const std::string& mode,
               std::optional<std::uint64_t> seed = std::nullopt) {
  cli::TrainOptions train;
  train.data_dir = dir.sub(data);
  train.mode = mode;
  train.config_path = run_path;
  train.run_dir = dir.sub(run_sub);
  train.seed = seed;
  return cli::cmd_train(train);
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("rejects unknown keys") {
    CHECK_THROWS_WITH_AS(cli::parse_gen_config(R"({"n_trian":5})"),
                         doctest::Contains("unknown key"), cli::UsageError);
    CHECK_THROWS_WITH_AS(cli::parse_run_config(R"({"train":{"lr":1}})"),
                         doctest::Contains("unknown key"), cli::UsageError);
  }
  SUBCASE("mode names map one-to-one onto the ablation switches") {
    TrainConfig t;
    cli::apply_mode("mabr", t);
    CHECK(t.multi_layer);
    CHECK(t.hard_examples);
    cli::apply_mode("mabr-no-multi", t);
    CHECK_FALSE(t.multi_layer);
    CHECK(t.hard_examples);
    cli::apply_mode("mabr-no-hard", t);
    CHECK(t.multi_layer);
    CHECK_FALSE(t.hard_examples);
    CHECK_THROWS_AS(cli::apply_mode("mbar", t), cli::UsageError);
  }
}

TEST_CASE("generate command") {
  TempDir dir("generate");
  std::string gen_path, run_path;
  write_small_configs(dir, &gen_path, &run_path);

  SUBCASE("produces the four split files and is seed-stable") {
    CHECK(generate_into(dir, gen_path, "data") == cli::kOk);
    for (const char* name : {"train.jsonl", "dev.jsonl", "test.jsonl", "test_anti.jsonl",
                             "gen_config.json", "audit.json"})
      CHECK(fs::exists(fs::path(dir.sub("data")) / name));

    CHECK(generate_into(dir, gen_path, "data2") == cli::kOk);
    CHECK(read_all(dir.sub("data") + "/train.jsonl") == read_all(dir.sub("data2") + "/train.jsonl"));
  }
  SUBCASE("bad output path exits 2") {
    write_all(dir.sub("blocker"), "file");
    cli::GenerateOptions gen;
    gen.config_path = gen_path;
    gen.out_dir = dir.sub("blocker") + "/nested";
    CHECK(cli::cmd_generate(gen) == cli::kUsageError);
  }
  SUBCASE("missing config exits 2") {
    cli::GenerateOptions gen;
    gen.config_path = dir.sub("nope.json");
    gen.out_dir = dir.sub("data3");
    CHECK(cli::cmd_generate(gen) == cli::kUsageError);
  }
  SUBCASE("invalid generator config exits 2") {
    write_all(dir.sub("bad.json"), R"({"seq_len":4})");
    cli::GenerateOptions gen;
    gen.config_path = dir.sub("bad.json");
    gen.out_dir = dir.sub("data4");
    CHECK(cli::cmd_generate(gen) == cli::kUsageError);
  }
}

TEST_CASE("train, eval and report pipeline") {
  TempDir dir("pipeline");
  std::string gen_path, run_path;
  write_small_configs(dir, &gen_path, &run_path);
  REQUIRE(generate_into(dir, gen_path, "data") == cli::kOk);

  SUBCASE("finetune checkpoints carry no heads and the log has T records") {
    REQUIRE(train_into(dir, run_path, "data", "run_ft", "finetune") == cli::kOk);
    const Parameters p = load_checkpoint(cli::checkpoint_path(dir.sub("run_ft"), 1));
    CHECK(p.detectors.empty());
    CHECK(p.discriminators.empty());
    CHECK(cli::read_epoch_log(dir.sub("run_ft")).size() == 2);
    CHECK_FALSE(fs::exists(fs::path(dir.sub("run_ft")) / "phase1.json"));
  }

  SUBCASE("mabr run populates the run directory and eval emits the exact schema") {
    REQUIRE(train_into(dir, run_path, "data", "run_mabr", "mabr") == cli::kOk);
    CHECK(fs::exists(fs::path(dir.sub("run_mabr")) / "phase1.json"));
    CHECK(fs::exists(fs::path(dir.sub("run_mabr")) / "checkpoints" / "phase1.ckpt"));
    CHECK(cli::read_epoch_log(dir.sub("run_mabr")).size() == 2);

    const json snapshot = json::parse(read_all(dir.sub("run_mabr") + "/config.json"));
    CHECK(snapshot.at("mode") == "mabr");
    CHECK(snapshot.at("train").at("multi_layer") == true);

    cli::EvalOptions eval;
    eval.run_dir = dir.sub("run_mabr");
    eval.split = "union";
    REQUIRE(cli::cmd_eval(eval) == cli::kOk);
    const std::string report_path = dir.sub("run_mabr") + "/report_union.json";
    const json report = json::parse(read_all(report_path));
    const std::vector<std::string> expected_keys = {"acc",         "tpr_rms", "independence",
                                                    "sufficiency", "dto",     "skipped_cells"};
    CHECK(report.size() == expected_keys.size());
    for (const std::string& key : expected_keys) CHECK(report.contains(key));

    // Evaluating twice is byte-identical.
    const std::string first = read_all(report_path);
    REQUIRE(cli::cmd_eval(eval) == cli::kOk);
    CHECK(read_all(report_path) == first);

    // Missing checkpoint is a runtime failure.
    fs::remove(cli::checkpoint_path(dir.sub("run_mabr"), 2));
    fs::remove(cli::checkpoint_path(dir.sub("run_mabr"), 1));
    CHECK(cli::cmd_eval(eval) == cli::kRuntimeError);
  }

  SUBCASE("ablation modes land in the config snapshot") {
    REQUIRE(train_into(dir, run_path, "data", "run_nm", "mabr-no-multi") == cli::kOk);
    const json snapshot = json::parse(read_all(dir.sub("run_nm") + "/config.json"));
    CHECK(snapshot.at("train").at("multi_layer") == false);
    CHECK(snapshot.at("train").at("hard_examples") == true);
  }

  SUBCASE("unknown split and unknown mode exit 2") {
    cli::EvalOptions eval;
    eval.run_dir = dir.sub("missing");
    eval.split = "validation";
    CHECK(cli::cmd_eval(eval) == cli::kUsageError);
    CHECK(train_into(dir, run_path, "data", "run_bad", "adversarial") == cli::kUsageError);
  }
}

TEST_CASE("determinism and blindness at the file level") {
  TempDir dir("blind");
  std::string gen_path, run_path;
  write_small_configs(dir, &gen_path, &run_path);
  REQUIRE(generate_into(dir, gen_path, "data") == cli::kOk);

  REQUIRE(train_into(dir, run_path, "data", "run_a", "mabr") == cli::kOk);
  REQUIRE(train_into(dir, run_path, "data", "run_b", "mabr") == cli::kOk);
  CHECK(read_all(dir.sub("run_a") + "/epochs.jsonl") == read_all(dir.sub("run_b") + "/epochs.jsonl"));
  CHECK(read_all(cli::checkpoint_path(dir.sub("run_a"), 2)) ==
        read_all(cli::checkpoint_path(dir.sub("run_b"), 2)));

  // Permute the z column across rows of every split; training output must not move.
  fs::create_directories(dir.sub("data_zperm"));
  std::mt19937_64 rng(9);
  for (const char* split : {"train.jsonl", "dev.jsonl", "test.jsonl", "test_anti.jsonl"}) {
    std::ifstream in(dir.sub("data") + "/" + split);
    std::vector<json> rows;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) rows.push_back(json::parse(line));
    std::vector<int> zs;
    for (const json& row : rows) zs.push_back(row.at("z").get<int>());
    std::shuffle(zs.begin(), zs.end(), rng);
    std::ofstream out(dir.sub("data_zperm") + "/" + split);
    for (size_t i = 0; i < rows.size(); ++i) {
      json row = rows[i];
      row["z"] = zs[i];
      out << row.dump() << "\n";
    }
  }
  REQUIRE(train_into(dir, run_path, "data_zperm", "run_z", "mabr") == cli::kOk);
  CHECK(read_all(dir.sub("run_a") + "/epochs.jsonl") == read_all(dir.sub("run_z") + "/epochs.jsonl"));
  CHECK(read_all(cli::checkpoint_path(dir.sub("run_a"), 2)) ==
        read_all(cli::checkpoint_path(dir.sub("run_z"), 2)));
}

TEST_CASE("report command") {
  TempDir dir("report");
  std::string gen_path, run_path;
  write_small_configs(dir, &gen_path, &run_path);
  REQUIRE(generate_into(dir, gen_path, "data") == cli::kOk);

  REQUIRE(train_into(dir, run_path, "data", "run_ft", "finetune") == cli::kOk);
  REQUIRE(train_into(dir, run_path, "data", "run_m1", "mabr", 3) == cli::kOk);
  REQUIRE(train_into(dir, run_path, "data", "run_m2", "mabr", 4) == cli::kOk);
  for (const char* run : {"run_ft", "run_m1", "run_m2"}) {
    for (const char* split : {"test", "union"}) {
      cli::EvalOptions eval;
      eval.run_dir = dir.sub(run);
      eval.split = split;
      REQUIRE(cli::cmd_eval(eval) == cli::kOk);
    }
  }

  cli::ReportOptions report;
  report.run_dirs = {dir.sub("run_ft"), dir.sub("run_m1"), dir.sub("run_m2")};
  report.out_dir = dir.sub("out");
  REQUIRE(cli::cmd_report(report) == cli::kOk);

  SUBCASE("table means equal the per-run reports") {
    const std::string table = read_all(dir.sub("out") + "/table.tsv");
    std::istringstream lines(table);
    std::string header, ft_row, mabr_row;
    std::getline(lines, header);
    std::getline(lines, ft_row);
    std::getline(lines, mabr_row);
    CHECK(header == "mode\truns\tacc\ttpr_rms\tindependence\tsufficiency");
    CHECK(ft_row.substr(0, 11) == "finetune\t1\t");
    CHECK(mabr_row.substr(0, 7) == "mabr\t2\t");

    const json m1 = json::parse(read_all(dir.sub("run_m1") + "/report_union.json"));
    const json m2 = json::parse(read_all(dir.sub("run_m2") + "/report_union.json"));
    std::istringstream cells(mabr_row);
    std::string mode, runs, acc, tpr;
    std::getline(cells, mode, '\t');
    std::getline(cells, runs, '\t');
    std::getline(cells, acc, '\t');
    std::getline(cells, tpr, '\t');
    const double mean_tpr = (m1.at("tpr_rms").get<double>() + m2.at("tpr_rms").get<double>()) / 2;
    CHECK(std::abs(std::stod(tpr) - mean_tpr) < 1e-9);
  }

  SUBCASE("figure has exactly 2L series") {
    const std::string svg = read_all(dir.sub("out") + "/layers.svg");
    size_t count = 0, pos = 0;
    while ((pos = svg.find("class=\"series\"", pos)) != std::string::npos) {
      ++count;
      pos += 10;
    }
    CHECK(count == 4);  // L=2 in the small config
  }

  SUBCASE("mixed dataset hashes are rejected") {
    std::string gen2 = dir.sub("gen2.json");
    write_all(gen2, read_all(gen_path));
    REQUIRE(generate_into(dir, gen_path, "data_other") == cli::kOk);
    // Different bytes via a different seed.
    cli::GenerateOptions gen;
    gen.config_path = gen_path;
    gen.out_dir = dir.sub("data_other");
    gen.seed = 99;
    REQUIRE(cli::cmd_generate(gen) == cli::kOk);
    REQUIRE(train_into(dir, run_path, "data_other", "run_other", "mabr") == cli::kOk);
    for (const char* split : {"test", "union"}) {
      cli::EvalOptions eval;
      eval.run_dir = dir.sub("run_other");
      eval.split = split;
      REQUIRE(cli::cmd_eval(eval) == cli::kOk);
    }
    cli::ReportOptions mixed;
    mixed.run_dirs = {dir.sub("run_m1"), dir.sub("run_other")};
    mixed.out_dir = dir.sub("out_mixed");
    CHECK(cli::cmd_report(mixed) == cli::kUsageError);
  }

  SUBCASE("reports must exist before reporting") {
    REQUIRE(train_into(dir, run_path, "data", "run_new", "mabr", 11) == cli::kOk);
    cli::ReportOptions missing;
    missing.run_dirs = {dir.sub("run_new")};
    missing.out_dir = dir.sub("out2");
    CHECK(cli::cmd_report(missing) == cli::kUsageError);
  }
}
