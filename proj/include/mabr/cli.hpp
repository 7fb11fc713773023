#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabr/datagen.hpp"
#include "mabr/model.hpp"
#include "mabr/trainer.hpp"

namespace mabr::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerateOptions {
  std::string config_path;  // optional; defaults otherwise
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

struct TrainOptions {
  std::string data_dir;
  std::string mode = "mabr";  // finetune | mabr | mabr-no-multi | mabr-no-hard
  std::string config_path;    // optional
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

struct EvalOptions {
  std::string run_dir;
  std::string split = "union";  // train | dev | test | test_anti | union
  bool per_epoch = false;       // additionally evaluate every stored epoch
};

struct ReportOptions {
  std::vector<std::string> run_dirs;
  std::string out_dir;
};

int cmd_generate(const GenerateOptions& options);
int cmd_train(const TrainOptions& options);
int cmd_eval(const EvalOptions& options);
int cmd_report(const ReportOptions& options);

// ---- pieces shared with tests ----------------------------------------------

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

GenConfig parse_gen_config(const std::string& json_text);
RunConfig parse_run_config(const std::string& json_text);
void apply_mode(const std::string& mode, TrainConfig& config);

// Training-side loader: drops the protected attribute.
TrainView to_train_view(const Dataset& dataset, const ModelConfig& config);

std::uint64_t fnv1a64_file(const std::string& path, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string dataset_hash(const std::string& data_dir);

std::string checkpoint_path(const std::string& run_dir, int epoch);  // 1-based epoch

std::vector<EpochRecord> read_epoch_log(const std::string& run_dir);

void write_layer_figure(const std::string& path, const std::vector<double>& phase1_detector,
                        const std::vector<double>& phase1_discriminator,
                        const std::vector<EpochRecord>& epochs);

}  // namespace mabr::cli
