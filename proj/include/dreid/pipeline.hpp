#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dreid/config.hpp"
#include "dreid/eval.hpp"

namespace dreid {

struct EpochLog {
  int epoch;
  double lr, l_id, l_tri, combined;
};

struct TrainOutput {
  ModelParams params;
  std::vector<EpochLog> logs;
  std::string final_checkpoint;  // empty when no checkpoint dir was given
};

// Two-stage training loop over an in-memory dataset. When ckpt_dir is
// non-empty, writes per-epoch checkpoints (keeping the last two) plus a
// final one, each with a config snapshot sidecar.
TrainOutput train_model(const Dataset& ds, const RunConfig& cfg, const std::string& ckpt_dir,
                        std::ostream& log);

// Embeds query and gallery splits and scores both protocols (sc first).
std::pair<EvalResult, EvalResult> evaluate_dataset(const Dataset& ds, const ModelParams& params,
                                                   const RunConfig& cfg);

// Metric report: one tab-separated line per protocol in metrics.tsv plus a
// structured metrics.json.
void write_metrics(const std::vector<EvalResult>& results, const std::string& dir);
std::string metrics_to_tsv(const std::vector<EvalResult>& results);

// Subcommand bodies shared by the CLI and the acceptance suite. Each returns
// a process exit code.
int cmd_gen_data(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& protocol,
             std::ostream& log);
int cmd_gradcheck(std::ostream& log);
int cmd_heatmap(const RunConfig& cfg, const std::string& checkpoint,
                const std::vector<std::string>& images, std::ostream& log);

// Loads the dataset named by cfg (synth export directory or PRCC tree).
Dataset load_configured_dataset(const RunConfig& cfg);

}  // namespace dreid
