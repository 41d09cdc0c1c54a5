#pragma once

#include "dreid/tensor.hpp"

namespace dreid {

enum class GcaMode { kAttentionAndGate, kGateOnly };

struct GcaParams {
  Tensor kernel;  // [k], k odd; 1-D conv over channel descriptors
  GcaMode mode = GcaMode::kAttentionAndGate;
};

// Channel weights: sigmoid(conv1d over the globally average-pooled channel
// descriptor). Every entry lies strictly in (0,1).
Tensor eca_weights(Tape& tape, const Tensor& x, const Tensor& kernel);  // -> [N,C]

// A[n,c,h,w] = X[n,c,h,w] * w[n,c].
Tensor apply_attention(Tape& tape, const Tensor& x, const Tensor& weights_nc);

// Self-gating G = A * sigmoid(A), applied per entry.
Tensor gate(Tape& tape, const Tensor& a);

// attention_and_gate: gate(apply_attention(x, eca_weights(x)));
// gate_only: gate(x).
Tensor gca_block(Tape& tape, const Tensor& x, const GcaParams& params);

}  // namespace dreid
