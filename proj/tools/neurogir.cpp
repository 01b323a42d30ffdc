// neurogir command-line entry point. Settings live in JSON files; flags only
// name files and directories.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "neurogir/commands.hpp"

int main(int argc, char** argv) {
  using namespace neurogir;
  CLI::App app{"3D neuron segmentation: train, evaluate, predict, verify gradients, synthesize data"};
  app.require_subcommand(1);
  int code = exit_ok;

  std::string config, out_dir;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", config, "run config JSON")->required();
  train_cmd->add_option("--out", out_dir, "run directory")->required();
  train_cmd->callback([&] { code = cmd_train(config, out_dir, std::cout, std::cerr); });

  std::string checkpoint, data, report;
  auto* eval_cmd = app.add_subcommand("eval", "best-threshold metrics over a dataset directory");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval_cmd->add_option("--data", data, "dataset directory")->required();
  eval_cmd->add_option("--report", report, "JSON report path (a .txt table is written beside it)")->required();
  eval_cmd->callback([&] { code = cmd_eval(checkpoint, data, report, std::cout, std::cerr); });

  std::string volume;
  auto* predict_cmd = app.add_subcommand("predict", "probability map for one volume");
  predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  predict_cmd->add_option("--volume", volume, "input volume directory")->required();
  predict_cmd->add_option("--out", out_dir, "output volume directory")->required();
  predict_cmd->callback([&] { code = cmd_predict(checkpoint, volume, out_dir, std::cout, std::cerr); });

  std::string op;
  bool all = false;
  double tol = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of operator gradients");
  auto* op_opt = grad_cmd->add_option("--op", op, "operator name");
  auto* all_opt = grad_cmd->add_flag("--all", all, "check every operator");
  op_opt->excludes(all_opt);
  grad_cmd->add_option("--tol", tol, "relative error tolerance")->capture_default_str();
  grad_cmd->callback([&] {
    if (!all && op.empty()) throw CLI::ValidationError("gradcheck", "pass --op NAME or --all");
    code = cmd_gradcheck(all ? std::string() : op, tol, std::cout, std::cerr);
  });

  std::string spec;
  std::size_t count = 1;
  auto* synth_cmd = app.add_subcommand("synth", "generate a phantom dataset");
  synth_cmd->add_option("--spec", spec, "phantom spec JSON")->required();
  synth_cmd->add_option("--count", count, "number of samples")->capture_default_str();
  synth_cmd->add_option("--out", out_dir, "dataset directory")->required();
  synth_cmd->callback([&] { code = cmd_synth(spec, count, out_dir, std::cout, std::cerr); });

  std::string axis, pgm;
  auto* project_cmd = app.add_subcommand("project", "maximum-intensity projection to PGM");
  project_cmd->add_option("--volume", volume, "volume directory")->required();
  project_cmd->add_option("--axis", axis, "depth | height | width")->required();
  project_cmd->add_option("--out", pgm, "output .pgm")->required();
  project_cmd->callback([&] { code = cmd_project(volume, axis, pgm, std::cout, std::cerr); });

  auto* params_cmd = app.add_subcommand("params", "parameter counts with and without the GIR block");
  params_cmd->add_option("--config", config, "run config JSON")->required();
  params_cmd->callback([&] { code = cmd_params(config, std::cout, std::cerr); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_input;
  }
  return code;
}
