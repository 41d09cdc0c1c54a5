#include "dreid/gradsuite.hpp"

#include <cmath>

#include "dreid/backbone.hpp"
#include "dreid/cdm.hpp"
#include "dreid/gca.hpp"
#include "dreid/losses.hpp"
#include "dreid/rng.hpp"
#include "dreid/tensor.hpp"

namespace dreid {

namespace {

constexpr double kEps = 1e-5;
constexpr int kSeedsPerOp = 5;

Tensor rand_tensor(std::vector<int> shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  std::vector<double> data(static_cast<std::size_t>(n));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(data));
}

// Magnitudes in [0.1, 1]: keeps relu probes at least 1e4 epsilons from the
// kink.
Tensor rand_away_from_zero(std::vector<int> shape, CounterRng& rng) {
  Tensor t = rand_tensor(shape, rng, 0.1, 1.0);
  for (auto& v : t.data())
    if (rng.uniform() < 0.5) v = -v;
  return t;
}

using ScalarFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

struct Case {
  std::string op;
  std::function<std::pair<ScalarFn, std::vector<Tensor>>(CounterRng&)> make;
  // Composites through relu / max-pool use the kink detector; smooth ops run
  // the plain check.
  bool skip_kinks = false;
};

// Micro backbone small enough that every parameter entry is probed by
// central differences within the runtime budget.
BackboneConfig micro_config() {
  BackboneConfig cfg;
  cfg.input_h = 16;
  cfg.input_w = 8;
  cfg.stem_channels = 2;
  cfg.stages = {{{2, 1, 2}, {3, 1, 2}, {4, 1, 2}, {5, 1, 1}}};
  cfg.num_classes = 4;
  return cfg;
}

std::vector<Case> suite_cases() {
  std::vector<Case> cases;

  cases.push_back({"conv2d", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({1, 2, 5, 5}, rng), rand_tensor({3, 2, 3, 3}, rng),
                              rand_tensor({3}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      return ops::sum(t, ops::conv2d(t, v[0], v[1], v[2], 2, 1));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"conv1d_channels", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 8}, rng), rand_tensor({5}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      // Weight the outputs so every position has a distinct gradient path.
      Tensor mixed = ops::conv1d_channels(t, v[0], v[1]);
      return ops::sum(t, ops::mul(t, mixed, ops::sigmoid(t, mixed)));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"global_avg_pool", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 3, 4, 4}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor p = ops::global_avg_pool(t, v[0]);
      return ops::sum(t, ops::mul(t, p, p));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"global_max_pool", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 3, 4, 4}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor p = ops::global_max_pool(t, v[0]);
      return ops::sum(t, ops::mul(t, p, p));
    };
    return std::make_pair(f, in);
  }, true});

  cases.push_back({"relu", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_away_from_zero({3, 7}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor r = ops::relu(t, v[0]);
      return ops::sum(t, ops::mul(t, r, r));
    };
    return std::make_pair(f, in);
  }, true});

  cases.push_back({"sigmoid", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({3, 7}, rng, -2.0, 2.0)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor s = ops::sigmoid(t, v[0]);
      return ops::sum(t, ops::mul(t, s, s));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"elementwise", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 3, 2, 2}, rng), rand_tensor({2, 3, 2, 2}, rng),
                              rand_tensor({2, 3}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor mixed = ops::sub(t, ops::mul(t, ops::add(t, v[0], v[1]), v[2]), v[1]);
      return ops::sum(t, ops::mul(t, mixed, mixed));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"linear", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({3, 4}, rng), rand_tensor({5, 4}, rng),
                              rand_tensor({5}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor y = ops::linear(t, v[0], v[1], v[2]);
      return ops::sum(t, ops::mul(t, y, y));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"eca_weights", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 4, 3, 3}, rng), rand_tensor({3}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor w = eca_weights(t, v[0], v[1]);
      return ops::sum(t, ops::mul(t, w, w));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"gate", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 3, 3, 3}, rng, -3.0, 3.0)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) { return ops::sum(t, gate(t, v[0])); };
    return std::make_pair(f, in);
  }});

  cases.push_back({"gca_block", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 4, 3, 3}, rng), rand_tensor({3}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      GcaParams p{v[1], GcaMode::kAttentionAndGate};
      Tensor g = gca_block(t, v[0], p);
      return ops::sum(t, ops::mul(t, g, g));
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"pool_head", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({2, 3, 4, 4}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      Tensor p = pool_head(t, v[0]);
      return ops::sum(t, ops::mul(t, p, p));
    };
    return std::make_pair(f, in);
  }, true});

  cases.push_back({"id_loss", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({4, 5}, rng, -2.0, 2.0)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      return id_loss(t, v[0], {0, 2, 4, 1});
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"triplet_batch_hard", [](CounterRng& rng) {
    std::vector<Tensor> in = {rand_tensor({8, 4}, rng)};
    ScalarFn f = [](Tape& t, std::vector<Tensor>& v) {
      return triplet_batch_hard(t, v[0], {0, 0, 1, 1, 2, 2, 3, 3}, 0.3);
    };
    return std::make_pair(f, in);
  }});

  cases.push_back({"forward", [](CounterRng& rng) {
    BackboneConfig cfg = micro_config();
    ModelParams params = init_params(cfg, CounterRng(rng.next_u64()));
    Tensor images = rand_tensor({2, 3, cfg.input_h, cfg.input_w}, rng, 0.0, 1.0);
    Tensor masks = rand_tensor({2, 1, cfg.input_h, cfg.input_w}, rng, 0.0, 1.0);

    std::vector<Tensor> in;
    for_each_param(params, [&](const std::string&, Tensor& t) { in.push_back(t); });

    ScalarFn f = [cfg, params, images, masks](Tape& t, std::vector<Tensor>& v) {
      ModelParams p = params;
      std::size_t i = 0;
      for_each_param(p, [&](const std::string&, Tensor& pt) { pt = v[i++]; });
      Tensor img = images, msk = masks;
      ForwardResult fwd = forward(t, img, &msk, p, cfg);
      return ops::sum(t, fwd.logits);
    };
    return std::make_pair(f, in);
  }, true});

  return cases;
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(std::uint64_t seed) {
  std::vector<GradSuiteEntry> out;
  for (const auto& c : suite_cases()) {
    GradSuiteEntry entry{c.op, 0.0, true, 0, 0};
    for (int s = 0; s < kSeedsPerOp; ++s) {
      CounterRng rng = CounterRng(seed).split(RngStream::kTest, static_cast<std::uint64_t>(s));
      auto [f, inputs] = c.make(rng);
      GradCheckReport rep = grad_check(f, std::move(inputs), kEps, c.skip_kinks);
      entry.max_rel_err = std::max(entry.max_rel_err, rep.max_rel_err);
      entry.finite = entry.finite && rep.finite;
      entry.kink_skipped += rep.kink_skipped;
      entry.entries += rep.entries;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace dreid
