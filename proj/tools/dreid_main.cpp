#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dreid/common.hpp"
#include "dreid/config.hpp"
#include "dreid/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config;
  std::string out;
  std::string data;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "Config file (section.key = value lines)");
  cmd->add_option("--out", opts.out, "Output directory");
  cmd->add_option("--data", opts.data, "Dataset directory");
  cmd->add_option("--seed", opts.seed, "Seed override (also applied to synth.seed)")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--epochs", opts.epochs, "Epoch count override");
}

dreid::RunConfig resolve_config(const CommonOpts& opts) {
  dreid::RunConfig cfg =
      opts.config.empty() ? dreid::RunConfig{} : dreid::load_config(opts.config);
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  if (!opts.data.empty()) cfg.data_dir = opts.data;
  if (opts.seed_set) {
    cfg.seed = opts.seed;
    cfg.synth.seed = opts.seed;
  }
  if (opts.epochs >= 0) cfg.epochs = opts.epochs;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dreid: clothes-changing re-id toolkit on a synthetic pedestrian benchmark"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, heat_opts;
  std::string checkpoint, protocol = "both";
  std::vector<std::string> images;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset directory");
  add_common(gen, gen_opts);

  CLI::App* train = app.add_subcommand("train", "Run the two-stage training loop");
  add_common(train, train_opts);

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint under the SC/CC protocols");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--protocol", protocol, "sc | cc | both");

  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of every operation");
  (void)grad;

  CLI::App* heat = app.add_subcommand("heatmap", "Emit stage-4 heatmaps for images");
  add_common(heat, heat_opts);
  heat->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  heat->add_option("--images", images, "Image paths")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return dreid::cmd_gen_data(resolve_config(gen_opts), std::cout);
    if (train->parsed()) return dreid::cmd_train(resolve_config(train_opts), std::cout);
    if (eval->parsed())
      return dreid::cmd_eval(resolve_config(eval_opts), checkpoint, protocol, std::cout);
    if (grad->parsed()) return dreid::cmd_gradcheck(std::cout);
    if (heat->parsed())
      return dreid::cmd_heatmap(resolve_config(heat_opts), checkpoint, images, std::cout);
  } catch (const dreid::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const dreid::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
