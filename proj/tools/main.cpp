#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "mabr/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multilayer adversarial bias removal on a synthetic biased corpus"};
  app.require_subcommand(1);

  mabr::cli::GenerateOptions gen;
  std::optional<std::uint64_t> gen_seed;
  CLI::App* generate = app.add_subcommand("generate", "Generate the synthetic corpus");
  generate->add_option("--config", gen.config_path, "Generator config JSON");
  generate->add_option("--out", gen.out_dir, "Output directory")->required();
  generate->add_option("--seed", gen_seed, "Override the generator seed");

  mabr::cli::TrainOptions train;
  std::optional<std::uint64_t> train_seed;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one run into a run directory");
  train_cmd->add_option("--data", train.data_dir, "Dataset directory")->required();
  train_cmd->add_option("--mode", train.mode,
                        "finetune | mabr | mabr-no-multi | mabr-no-hard");
  train_cmd->add_option("--config", train.config_path, "Run config JSON");
  train_cmd->add_option("--run-dir", train.run_dir, "Run directory")->required();
  train_cmd->add_option("--seed", train_seed, "Override model and training seed");

  mabr::cli::EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate the selected checkpoint");
  eval_cmd->add_option("--run-dir", eval.run_dir, "Run directory")->required();
  eval_cmd->add_option("--split", eval.split, "train | dev | test | test_anti | union");
  eval_cmd->add_flag("--per-epoch", eval.per_epoch,
                     "Also evaluate every stored epoch (accuracy, TPR gap, DTO)");

  mabr::cli::ReportOptions report;
  CLI::App* report_cmd = app.add_subcommand("report", "Comparison table and layer figure");
  report_cmd->add_option("run_dirs", report.run_dirs, "Run directories")->required();
  report_cmd->add_option("--out", report.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mabr::cli::kUsageError;
  }

  gen.seed = gen_seed;
  train.seed = train_seed;

  if (generate->parsed()) return mabr::cli::cmd_generate(gen);
  if (train_cmd->parsed()) return mabr::cli::cmd_train(train);
  if (eval_cmd->parsed()) return mabr::cli::cmd_eval(eval);
  return mabr::cli::cmd_report(report);
}
