#include "dreid/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dreid/common.hpp"

namespace dreid {

void LossConfig::validate() const {
  require(alpha >= 0.0, "loss: margin alpha must be >= 0");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "loss: lambda weights must be >= 0");
  require(switch_epoch >= 0, "loss: switch epoch must be >= 0");
}

Tensor id_loss(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  require(logits.ndim() == 2, "id_loss: logits must be [N,K], got shape " + shape_str(logits.shape()));
  int n = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(labels.size()) == n,
          "id_loss: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(n));
  for (int i = 0; i < n; ++i)
    require(labels[static_cast<std::size_t>(i)] >= 0 && labels[static_cast<std::size_t>(i)] < k,
            "id_loss: label " + std::to_string(labels[static_cast<std::size_t>(i)]) + " at row " +
                std::to_string(i) + " outside [0," + std::to_string(k) + ")");

  // Row-wise softmax with max subtraction; probabilities saved for backward.
  std::vector<double> probs(static_cast<std::size_t>(n) * k);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* row = logits.ptr() + static_cast<std::size_t>(i) * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(row[j] - m);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(i) * k + j] = std::exp(row[j] - m) / denom;
    total += -(row[labels[static_cast<std::size_t>(i)]] - m - std::log(denom));
  }
  Tensor loss({1}, {total / n});
  int lid = tape.node_of(logits);
  if (lid < 0) return tape.record("id_loss", std::move(loss), {}, nullptr);
  return tape.record("id_loss", std::move(loss), {lid},
                     [lid, probs, labels, n, k](Tape& tp, const std::vector<double>& g) {
                       auto& gl = tp.grad_buffer(lid);
                       double scale = g[0] / n;
                       for (int i = 0; i < n; ++i)
                         for (int j = 0; j < k; ++j) {
                           double p = probs[static_cast<std::size_t>(i) * k + j];
                           double onehot = labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
                           gl[static_cast<std::size_t>(i) * k + j] += scale * (p - onehot);
                         }
                     });
}

std::vector<double> pairwise_distances(const double* e, int n, int d) {
  require(n >= 2, "pairwise_distances: need at least 2 rows");
  std::vector<double> sq(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int t = 0; t < d; ++t) s += e[static_cast<std::size_t>(i) * d + t] * e[static_cast<std::size_t>(i) * d + t];
    sq[static_cast<std::size_t>(i)] = s;
  }
  std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (int t = 0; t < d; ++t)
        dot += e[static_cast<std::size_t>(i) * d + t] * e[static_cast<std::size_t>(j) * d + t];
      double s = sq[static_cast<std::size_t>(i)] + sq[static_cast<std::size_t>(j)] - 2.0 * dot;
      double val = std::sqrt(s > 0.0 ? s : 0.0);
      dist[static_cast<std::size_t>(i) * n + j] = val;
      dist[static_cast<std::size_t>(j) * n + i] = val;
    }
  return dist;
}

Tensor triplet_batch_hard(Tape& tape, const Tensor& embeddings, const std::vector<int>& labels,
                          double alpha) {
  require(embeddings.ndim() == 2, "triplet: embeddings must be [N,D], got shape " +
                                      shape_str(embeddings.shape()));
  int n = embeddings.dim(0), d = embeddings.dim(1);
  require(static_cast<int>(labels.size()) == n, "triplet: label count does not match batch");
  require(alpha >= 0.0, "triplet: margin must be >= 0");

  auto dist = pairwise_distances(embeddings.ptr(), n, d);

  std::vector<int> pos_idx(static_cast<std::size_t>(n), -1), neg_idx(static_cast<std::size_t>(n), -1);
  for (int a = 0; a < n; ++a) {
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      double dd = dist[static_cast<std::size_t>(a) * n + j];
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(a)]) {
        int& p = pos_idx[static_cast<std::size_t>(a)];
        if (p < 0 || dd > dist[static_cast<std::size_t>(a) * n + p]) p = j;  // ties keep the lowest index
      } else {
        int& q = neg_idx[static_cast<std::size_t>(a)];
        if (q < 0 || dd < dist[static_cast<std::size_t>(a) * n + q]) q = j;
      }
    }
    if (pos_idx[static_cast<std::size_t>(a)] < 0)
      throw ValidationError("triplet: label " + std::to_string(labels[static_cast<std::size_t>(a)]) +
                            " has a single instance; mining is undefined");
    if (neg_idx[static_cast<std::size_t>(a)] < 0)
      throw ValidationError("triplet: batch contains a single class; mining is undefined");
  }

  double total = 0.0;
  std::vector<bool> active(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    double hinge = alpha + dist[static_cast<std::size_t>(a) * n + pos_idx[static_cast<std::size_t>(a)]] -
                   dist[static_cast<std::size_t>(a) * n + neg_idx[static_cast<std::size_t>(a)]];
    active[static_cast<std::size_t>(a)] = hinge > 0.0;
    if (hinge > 0.0) total += hinge;
  }
  Tensor loss({1}, {total / n});
  int eid = tape.node_of(embeddings);
  if (eid < 0) return tape.record("triplet_batch_hard", std::move(loss), {}, nullptr);
  Tensor se = embeddings;
  return tape.record(
      "triplet_batch_hard", std::move(loss), {eid},
      [eid, se, dist, pos_idx, neg_idx, active, n, d](Tape& tp, const std::vector<double>& g) {
        auto& ge = tp.grad_buffer(eid);
        const double* e = se.ptr();
        double scale = g[0] / n;
        // d(a,b)/de_a = (e_a - e_b)/d(a,b); zero-distance pairs get a zero
        // subgradient.
        auto accum_pair = [&](int a, int b, double sign) {
          double dd = dist[static_cast<std::size_t>(a) * n + b];
          if (dd <= 0.0) return;
          for (int t = 0; t < d; ++t) {
            double diff = (e[static_cast<std::size_t>(a) * d + t] - e[static_cast<std::size_t>(b) * d + t]) / dd;
            ge[static_cast<std::size_t>(a) * d + t] += sign * scale * diff;
            ge[static_cast<std::size_t>(b) * d + t] -= sign * scale * diff;
          }
        };
        for (int a = 0; a < n; ++a) {
          if (!active[static_cast<std::size_t>(a)]) continue;
          accum_pair(a, pos_idx[static_cast<std::size_t>(a)], 1.0);
          accum_pair(a, neg_idx[static_cast<std::size_t>(a)], -1.0);
        }
      });
}

double combined_loss(int epoch, const LossConfig& cfg, double l_id, double l_tri) {
  require(epoch >= 0, "combined_loss: epoch must be >= 0");
  if (epoch < cfg.switch_epoch) return l_id;
  return cfg.lambda1 * l_id + cfg.lambda2 * l_tri;
}

Tensor combined_loss_node(Tape& tape, int epoch, const LossConfig& cfg, const Tensor& l_id,
                          const Tensor& l_tri) {
  require(epoch >= 0, "combined_loss: epoch must be >= 0");
  if (epoch < cfg.switch_epoch) return l_id;
  return ops::add(tape, ops::scale(tape, l_id, cfg.lambda1), ops::scale(tape, l_tri, cfg.lambda2));
}

}  // namespace dreid
