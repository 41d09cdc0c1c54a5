#pragma once

#include <vector>

#include "dreid/tensor.hpp"

namespace dreid {

struct LossConfig {
  double alpha = 0.3;    // triplet margin
  double lambda1 = 0.1;  // identity weight after the switch
  double lambda2 = 0.9;  // triplet weight after the switch
  int switch_epoch = 10;

  void validate() const;
};

// Mean cross-entropy of softmax(logits) against integer labels, stabilized
// by max subtraction.
Tensor id_loss(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

// Symmetric [N,N] Euclidean distance matrix with an exact zero diagonal;
// squared form clamped at zero before the root.
std::vector<double> pairwise_distances(const double* embeddings, int n, int d);

// Batch-hard mining: per anchor, the farthest same-label and the nearest
// different-label embedding; hinge at margin alpha, mean over anchors.
// Ties pick the lowest index. Requires every label to have a positive and a
// negative in the batch.
Tensor triplet_batch_hard(Tape& tape, const Tensor& embeddings, const std::vector<int>& labels,
                          double alpha);

// Identity loss alone before the switch epoch, the weighted combination from
// it on (inclusive).
double combined_loss(int epoch, const LossConfig& cfg, double l_id, double l_tri);
Tensor combined_loss_node(Tape& tape, int epoch, const LossConfig& cfg, const Tensor& l_id,
                          const Tensor& l_tri);

}  // namespace dreid
