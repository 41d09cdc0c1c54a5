#pragma once

#include <array>
#include <functional>
#include <string>

#include "dreid/gca.hpp"
#include "dreid/rng.hpp"
#include "dreid/tensor.hpp"

namespace dreid {

struct StageSpec {
  int channels;
  int blocks;  // conv pairs per stage; fixed at 1 in the toy topology
  int stride;
};

struct BackboneConfig {
  int input_h = 64, input_w = 32;
  int stem_channels = 16;
  int stem_kernel = 3;
  int stem_stride = 1;
  std::array<StageSpec, 4> stages{{{16, 1, 2}, {32, 1, 2}, {64, 1, 2}, {128, 1, 1}}};
  std::array<GcaMode, 4> gca_modes{GcaMode::kAttentionAndGate, GcaMode::kAttentionAndGate,
                                   GcaMode::kAttentionAndGate, GcaMode::kGateOnly};
  int gca_kernel_size = 3;
  int num_classes = 0;  // 0 = derive from the train split at training time
  bool use_cdm = true;
  bool use_gca = true;

  int embed_dim() const { return stages[3].channels; }
  // Spatial size after the stem and after each stage.
  std::pair<int, int> stage_output_hw(int stage_index) const;
  int mask_stem_stride() const;
  void validate() const;
};

struct StageParams {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  Tensor gca_kernel;
};

struct ModelParams {
  Tensor stem_w, stem_b;
  Tensor mask_w, mask_b;
  std::array<StageParams, 4> stages;
  Tensor fc_w, fc_b;
};

// He fan-in normal for conv/linear weights, zero biases, 1/k GCA kernels.
ModelParams init_params(const BackboneConfig& cfg, CounterRng rng);

void for_each_param(ModelParams& p, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const ModelParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

struct ForwardResult {
  Tensor embedding;  // [N,D]
  Tensor logits;     // [N,K]
  Tensor stage4;     // [N,C4,H4,W4]
};

// Full pipeline: stem, stage1(+GCA), optional mask fusion, stages 2-4, pool
// head, classifier. masks may be null (pure RGB baseline); when given it must
// be a [N,1,input_h,input_w] tensor.
ForwardResult forward(Tape& tape, const Tensor& images, const Tensor* masks,
                      const ModelParams& params, const BackboneConfig& cfg);

// Per channel, mean of global max pool and global average pool.
Tensor pool_head(Tape& tape, const Tensor& f);

Tensor classifier(Tape& tape, const Tensor& embedding, const Tensor& fc_w, const Tensor& fc_b);

// Flat binary container: manifest of (name, shape, offset), then packed
// little-endian f64 payloads.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path, const BackboneConfig& cfg);

}  // namespace dreid
