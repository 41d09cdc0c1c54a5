#include "dreid/gca.hpp"

#include "dreid/common.hpp"

namespace dreid {

Tensor eca_weights(Tape& tape, const Tensor& x, const Tensor& kernel) {
  Tensor pooled = ops::global_avg_pool(tape, x);
  Tensor mixed = ops::conv1d_channels(tape, pooled, kernel);
  return ops::sigmoid(tape, mixed);
}

Tensor apply_attention(Tape& tape, const Tensor& x, const Tensor& weights_nc) {
  require(x.ndim() == 4 && weights_nc.ndim() == 2 && x.dim(0) == weights_nc.dim(0) &&
              x.dim(1) == weights_nc.dim(1),
          "apply_attention: weights " + shape_str(weights_nc.shape()) +
              " do not match channels of " + shape_str(x.shape()));
  return ops::mul(tape, x, weights_nc);
}

Tensor gate(Tape& tape, const Tensor& a) { return ops::mul(tape, a, ops::sigmoid(tape, a)); }

Tensor gca_block(Tape& tape, const Tensor& x, const GcaParams& params) {
  if (params.mode == GcaMode::kGateOnly) return gate(tape, x);
  Tensor w = eca_weights(tape, x, params.kernel);
  return gate(tape, apply_attention(tape, x, w));
}

}  // namespace dreid
