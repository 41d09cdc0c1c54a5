#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dreid/backbone.hpp"
#include "dreid/data.hpp"
#include "dreid/losses.hpp"

namespace dreid {

// Merged run configuration. Every field has a default; the config file may
// override any subset and unknown keys are rejected with a suggestion.
struct RunConfig {
  std::uint64_t seed = 42;
  int epochs = 40;
  std::string out_dir = "out";
  std::string data_dir;
  std::string data_format = "synth";  // synth | prcc

  BackboneConfig model;
  bool two_stage = true;

  LossConfig loss;

  double lr = 3.5e-4;
  int decay_every = 20;
  double decay_factor = 0.1;

  int sampler_p = 8;
  int sampler_k = 4;
  int steps_per_epoch = 0;  // 0 = cover the train split once per epoch

  AugmentConfig aug;
  SynthConfig synth;

  std::vector<int> keep_labels;  // empty = LIP default kept set

  KeepTable keep_table() const;
  void validate() const;
};

// Grammar: UTF-8 lines of `section.key = value`, `#` starts a comment, blank
// lines ignored. Unknown keys are rejected naming the nearest known key.
RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig load_config(const std::string& path);

// Full snapshot, one line per key, stable ordering; doubles round-trip
// exactly.
std::string config_to_text(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace dreid
