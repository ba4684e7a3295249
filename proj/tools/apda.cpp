#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "apda/commands.hpp"

namespace {

using apda::ExperimentConfig;

struct CommonArgs {
  std::string config;
  std::string output_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config, "experiment config (JSON)");
  cmd->add_option("-o,--output-dir", args.output_dir, "output directory (default: config output_dir, then $APDA_OUTPUT_DIR)");
  cmd->allow_extras();
  cmd->footer("Any config key can be overridden with --section.key=value, e.g. --train.lambda-c=0.5");
}

std::vector<std::string> overrides_of(CLI::App* cmd, const CommonArgs& args) {
  std::vector<std::string> out;
  for (const std::string& extra : cmd->remaining()) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
      throw apda::ValidationError("unexpected argument '" + extra + "' (overrides look like --section.key=value)");
    }
    out.push_back(extra);
  }
  if (!args.output_dir.empty()) out.push_back("--output_dir=\"" + args.output_dir + "\"");
  return out;
}

ExperimentConfig config_of(CLI::App* cmd, const CommonArgs& args, std::vector<std::string> extra = {}) {
  std::vector<std::string> overrides = overrides_of(cmd, args);
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  std::optional<std::filesystem::path> path;
  if (!args.config.empty()) path = args.config;
  return apda::load_experiment_config(path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Associative partial domain adaptation: generate data, train, evaluate, report"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, report_args;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset (source.csv, target.csv, manifest.json)");
  add_common(gen, gen_args);

  auto* tr = app.add_subcommand("train", "train one variant and write checkpoint, metrics and snapshots");
  add_common(tr, train_args);
  std::string variant;
  tr->add_option("--variant", variant, "source_only | dann | base | crg | apda");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a target split");
  add_common(ev, eval_args);
  std::string checkpoint, eval_output;
  ev->add_option("--checkpoint", checkpoint, "checkpoint.json written by train")->required();
  ev->add_option("--output", eval_output, "report path (default: eval.json next to the checkpoint)");

  auto* rep = app.add_subcommand("report", "error curves, commonness histograms, feature export, sweeps");
  add_common(rep, report_args);
  std::vector<std::string> metrics;
  bool sweep = false;
  rep->add_option("metrics", metrics, "metrics.csv or metrics.json files")->required();
  rep->add_flag("--sweep", sweep, "also retrain every variant while varying num_target_classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      apda::cmd_generate(config_of(gen, gen_args));
    } else if (tr->parsed()) {
      std::vector<std::string> extra;
      if (!variant.empty()) extra.push_back("--train.variant=\"" + variant + "\"");
      apda::cmd_train(config_of(tr, train_args, extra));
    } else if (ev->parsed()) {
      std::optional<ExperimentConfig> cfg;
      const auto overrides = overrides_of(ev, eval_args);
      const bool only_output = overrides.size() == 1 && !eval_args.output_dir.empty();
      if (!eval_args.config.empty() || (!overrides.empty() && !only_output)) cfg = config_of(ev, eval_args);
      std::optional<std::filesystem::path> out;
      if (!eval_output.empty()) out = eval_output;
      apda::cmd_eval(checkpoint, cfg, out);
    } else if (rep->parsed()) {
      std::vector<std::filesystem::path> paths(metrics.begin(), metrics.end());
      apda::cmd_report(paths, config_of(rep, report_args), sweep);
    }
  } catch (const apda::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
