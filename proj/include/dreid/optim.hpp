#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dreid/backbone.hpp"

namespace dreid {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Single-tensor bias-corrected Adam update; t is the post-increment step
// counter (1 on the first step).
void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, std::int64_t t, double lr,
                 const AdamConfig& cfg, const std::string& name);

// Moment accumulators for a whole model, keyed by parameter name.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one step using the gradients left on the parameters by the last
  // backward pass. Rejects non-finite gradients naming the parameter.
  void step(ModelParams& params, double lr);

  std::int64_t steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::int64_t t_ = 0;
};

// Step decay: base_lr * factor^floor(epoch / decay_every).
double lr_at(int epoch, double base_lr, int decay_every, double factor);

}  // namespace dreid
