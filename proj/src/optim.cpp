#include "dreid/optim.hpp"

#include <cmath>

#include "dreid/common.hpp"

namespace dreid {

void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, std::int64_t t, double lr,
                 const AdamConfig& cfg, const std::string& name) {
  require(lr > 0.0, "adam: learning rate must be positive");
  require(grad.size() == param.size(), "adam: gradient size mismatch for '" + name + "'");
  if (m.empty()) m.assign(param.size(), 0.0);
  if (v.empty()) v.assign(param.size(), 0.0);

  for (double g : grad)
    if (!std::isfinite(g))
      throw ValidationError("adam: non-finite gradient for parameter '" + name + "'; step rejected");

  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void AdamState::step(ModelParams& params, double lr) {
  // Validate all gradients before touching any parameter, so a rejected step
  // leaves the model untouched.
  for_each_param(params, [&](const std::string& name, Tensor& t) {
    for (double g : t.grad())
      if (!std::isfinite(g))
        throw ValidationError("adam: non-finite gradient for parameter '" + name +
                              "'; step rejected");
  });
  ++t_;
  for_each_param(params, [&](const std::string& name, Tensor& t) {
    auto& mo = moments_[name];
    adam_update(t.data(), t.grad(), mo.m, mo.v, t_, lr, cfg_, name);
  });
}

double lr_at(int epoch, double base_lr, int decay_every, double factor) {
  require(epoch >= 0, "lr_at: epoch must be >= 0");
  require(decay_every >= 1, "lr_at: decay interval must be >= 1");
  return base_lr * std::pow(factor, static_cast<double>(epoch / decay_every));
}

}  // namespace dreid
