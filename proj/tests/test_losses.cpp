#include <cmath>

#include "doctest.h"
#include "dreid/common.hpp"
#include "dreid/losses.hpp"
#include "dreid/optim.hpp"
#include "dreid/rng.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dreid;
using testutil::random_tensor;

TEST_CASE("id_loss: certain prediction is ~0, uniform is ln K") {
  Tape tape;
  Tensor sure({1, 4}, {1000.0, 0.0, 0.0, 0.0});
  CHECK(id_loss(tape, sure, {0}).value() == doctest::Approx(0.0).epsilon(1e-12));

  Tensor uniform = Tensor::zeros({3, 4});
  CHECK(id_loss(tape, uniform, {0, 1, 3}).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(id_loss(tape, uniform, {0, 1, 3}).value() == doctest::Approx(1.386294).epsilon(1e-6));
}

TEST_CASE("id_loss matches the softmax-then-log loop oracle") {
  CounterRng rng(1);
  Tape tape;
  Tensor logits = random_tensor({6, 5}, rng, -3.0, 3.0);
  std::vector<int> labels = {0, 4, 2, 2, 1, 3};
  double got = id_loss(tape, logits, labels).value();
  CHECK(std::abs(got - oracle::id_loss_ref(logits, labels)) <= 1e-10);
  CHECK(got >= 0.0);
}

TEST_CASE("id_loss validates labels") {
  Tape tape;
  Tensor logits = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(id_loss(tape, logits, {0, 3}), ValidationError);
  CHECK_THROWS_AS(id_loss(tape, logits, {-1, 0}), ValidationError);
  CHECK_THROWS_AS(id_loss(tape, logits, {0}), ValidationError);
}

TEST_CASE("pairwise_distances: identical rows, 3-4-5 triangle, loop oracle") {
  std::vector<double> same = {1, 2, 1, 2, 1, 2};
  auto d0 = pairwise_distances(same.data(), 3, 2);
  for (double v : d0) CHECK(v == 0.0);

  std::vector<double> two = {0, 0, 3, 4};
  auto d1 = pairwise_distances(two.data(), 2, 2);
  CHECK(d1[0 * 2 + 1] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(d1[1 * 2 + 0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(d1[0] == 0.0);
  CHECK(d1[3] == 0.0);

  CounterRng rng(2);
  Tensor e = random_tensor({7, 4}, rng);
  auto got = pairwise_distances(e.ptr(), 7, 4);
  auto ref = oracle::pairwise_ref(e.data(), 7, 4);
  CHECK(testutil::max_abs_diff(got, ref) <= 1e-10);
}

TEST_CASE("pairwise_distances: symmetry, zero diagonal, triangle inequality") {
  CounterRng rng(3);
  Tensor e = random_tensor({9, 5}, rng);
  auto d = pairwise_distances(e.ptr(), 9, 5);
  for (int i = 0; i < 9; ++i) {
    CHECK(d[static_cast<std::size_t>(i) * 9 + i] == 0.0);
    for (int j = 0; j < 9; ++j) {
      CHECK(d[static_cast<std::size_t>(i) * 9 + j] == d[static_cast<std::size_t>(j) * 9 + i]);
      for (int k = 0; k < 9; ++k)
        CHECK(d[static_cast<std::size_t>(i) * 9 + j] <=
              d[static_cast<std::size_t>(i) * 9 + k] + d[static_cast<std::size_t>(k) * 9 + j] + 1e-9);
    }
  }
}

TEST_CASE("triplet: hinge at the margin when d_pos equals d_neg") {
  // unit square, one class per horizontal edge: every anchor sees its
  // positive at distance 1 and its nearest negative at distance 1
  Tape tape;
  Tensor e({4, 2}, {0, 0, 1, 0, 0, 1, 1, 1});
  Tensor loss = triplet_batch_hard(tape, e, {0, 0, 1, 1}, 0.3);
  CHECK(loss.value() == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("triplet: satisfied margin gives exactly zero") {
  Tape tape;
  // class clusters far apart: d_neg >= d_pos + alpha everywhere
  Tensor e({4, 1}, {0.0, 0.1, 10.0, 10.1});
  CHECK(triplet_batch_hard(tape, e, {0, 0, 1, 1}, 0.3).value() == 0.0);
}

TEST_CASE("triplet: 1-D hand case enumerated by the per-anchor oracle") {
  // coords [0,1,2,3], labels [a,a,b,b], alpha 0.3:
  //   anchor 0: d_pos=1 (idx1), d_neg=2 (idx2) -> hinge 0
  //   anchor 1: d_pos=1 (idx0), d_neg=1 (idx2) -> hinge 0.3
  //   anchor 2: d_pos=1 (idx3), d_neg=1 (idx1) -> hinge 0.3
  //   anchor 3: d_pos=1 (idx2), d_neg=2 (idx1) -> hinge 0
  // mean = 0.15
  Tape tape;
  Tensor e({4, 1}, {0, 1, 2, 3});
  std::vector<int> labels = {0, 0, 1, 1};
  double expect = oracle::triplet_ref(e.data(), 4, 1, labels, 0.3);
  CHECK(expect == doctest::Approx(0.15).epsilon(1e-15));
  CHECK(triplet_batch_hard(tape, e, labels, 0.3).value() == expect);
}

TEST_CASE("triplet matches the enumeration oracle on random batches") {
  CounterRng rng(4);
  Tape tape;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor e = random_tensor({8, 3}, rng);
    std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};
    double got = triplet_batch_hard(tape, e, labels, 0.3).value();
    double ref = oracle::triplet_ref(e.data(), 8, 3, labels, 0.3);
    CHECK(got == doctest::Approx(ref).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("triplet: scaling embeddings preserves hinge activity at alpha 0") {
  CounterRng rng(5);
  Tape tape;
  Tensor e = random_tensor({6, 2}, rng);
  std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  double base = triplet_batch_hard(tape, e, labels, 0.0).value();
  Tensor scaled(e.shape(), [&] {
    auto d = e.data();
    for (auto& v : d) v *= 3.5;
    return d;
  }());
  double big = triplet_batch_hard(tape, scaled, labels, 0.0).value();
  CHECK((base == 0.0) == (big == 0.0));
  if (base > 0.0) CHECK(big == doctest::Approx(3.5 * base).epsilon(1e-9));
}

TEST_CASE("triplet rejects undefined mining") {
  Tape tape;
  Tensor e = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(triplet_batch_hard(tape, e, {0, 0, 1}, 0.3),
                       doctest::Contains("single instance"), ValidationError);
  CHECK_THROWS_WITH_AS(triplet_batch_hard(tape, e, {0, 0, 0}, 0.3),
                       doctest::Contains("single class"), ValidationError);
}

TEST_CASE("combined_loss: switch boundary is exact") {
  LossConfig cfg;
  cfg.lambda1 = 0.1;
  cfg.lambda2 = 0.9;
  cfg.switch_epoch = 10;

  CHECK(combined_loss(0, cfg, 1.0, 2.0) == 1.0);            // stage 1: identity only
  CHECK(combined_loss(9, cfg, 1.0, 2.0) == 1.0);            // last epoch before the switch
  CHECK(combined_loss(10, cfg, 1.0, 2.0) ==
        doctest::Approx(1.9).epsilon(1e-15));               // switch epoch inclusive
  CHECK(combined_loss(11, cfg, 1.0, 2.0) == doctest::Approx(1.9).epsilon(1e-15));

  LossConfig degenerate = cfg;
  degenerate.lambda1 = 1.0;
  degenerate.lambda2 = 0.0;
  CHECK(combined_loss(50, degenerate, 0.7, 123.0) == doctest::Approx(0.7).epsilon(1e-15));

  CHECK_THROWS_AS(combined_loss(-1, cfg, 0, 0), ValidationError);
}

TEST_CASE("combined_loss_node mirrors the scalar rule and differentiates") {
  CounterRng rng(6);
  Tape tape;
  Tensor logits = random_tensor({4, 3}, rng);
  Tensor emb = random_tensor({4, 2}, rng);
  tape.watch(logits);
  Tensor lid = id_loss(tape, logits, {0, 1, 2, 0});
  Tensor ltri = triplet_batch_hard(tape, emb, {0, 0, 1, 1}, 0.3);

  LossConfig cfg;
  cfg.switch_epoch = 5;
  Tensor before = combined_loss_node(tape, 4, cfg, lid, ltri);
  CHECK(before.value() == lid.value());
  Tensor after = combined_loss_node(tape, 5, cfg, lid, ltri);
  CHECK(after.value() ==
        doctest::Approx(combined_loss(5, cfg, lid.value(), ltri.value())).epsilon(1e-15));
  tape.backward(after);  // gradient flows; no throw
}

TEST_CASE("adam: zero gradients never move parameters") {
  std::vector<double> param = {1.0, -2.0, 3.0};
  std::vector<double> m, v;
  AdamConfig cfg;
  for (int t = 1; t <= 10; ++t)
    adam_update(param, {0, 0, 0}, m, v, t, 0.1, cfg, "p");
  CHECK(param == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: single-step update magnitude is ~lr against the gradient sign") {
  AdamConfig cfg;
  for (double g : {0.5, -2.0, 1e-3}) {
    std::vector<double> param = {1.0};
    std::vector<double> m, v;
    adam_update(param, {g}, m, v, 1, 3.5e-4, cfg, "p");
    // bias-corrected first step: delta = lr * g / (|g| + eps)
    double expect = 1.0 - 3.5e-4 * g / (std::abs(g) + cfg.eps);
    CHECK(param[0] == doctest::Approx(expect).epsilon(1e-12));
    double delta = param[0] - 1.0;
    CHECK(std::abs(std::abs(delta) - 3.5e-4) <= 1e-6);
    CHECK((delta < 0) == (g > 0));
  }
}

TEST_CASE("adam matches a reference sequential implementation over steps") {
  CounterRng rng(7);
  AdamConfig cfg;
  std::vector<double> param = {0.3, -0.7};
  std::vector<double> m, v;

  // independent reference: textbook recurrences on plain scalars
  double rm[2] = {0, 0}, rv[2] = {0, 0}, rp[2] = {0.3, -0.7};
  for (int t = 1; t <= 5; ++t) {
    std::vector<double> g = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    adam_update(param, g, m, v, t, 0.01, cfg, "p");
    for (int i = 0; i < 2; ++i) {
      rm[i] = 0.9 * rm[i] + 0.1 * g[static_cast<std::size_t>(i)];
      rv[i] = 0.999 * rv[i] + 0.001 * g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(i)];
      double mhat = rm[i] / (1.0 - std::pow(0.9, t));
      double vhat = rv[i] / (1.0 - std::pow(0.999, t));
      rp[i] -= 0.01 * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  CHECK(param[0] == rp[0]);
  CHECK(param[1] == rp[1]);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  std::vector<double> param = {1.0};
  std::vector<double> m, v;
  CHECK_THROWS_WITH_AS(adam_update(param, {std::nan("")}, m, v, 1, 0.1, {}, "stem.w"),
                       doctest::Contains("stem.w"), ValidationError);
  CHECK(param[0] == 1.0);
}

TEST_CASE("lr_at reproduces the step-decay schedule") {
  CHECK(lr_at(0, 3.5e-4, 20, 0.1) == 3.5e-4);
  CHECK(lr_at(19, 3.5e-4, 20, 0.1) == 3.5e-4);
  CHECK(lr_at(20, 3.5e-4, 20, 0.1) == doctest::Approx(3.5e-5).epsilon(1e-12));
  CHECK(lr_at(40, 3.5e-4, 20, 0.1) == doctest::Approx(3.5e-6).epsilon(1e-12));
  CHECK(lr_at(45, 3.5e-4, 20, 0.1) == doctest::Approx(3.5e-6).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(-1, 3.5e-4, 20, 0.1), ValidationError);
}

TEST_CASE("loss gradients pass finite differences") {
  CounterRng rng(8);
  auto id_fn = [](Tape& t, std::vector<Tensor>& v) { return id_loss(t, v[0], {0, 2, 1}); };
  CHECK(grad_check(id_fn, {random_tensor({3, 4}, rng, -2.0, 2.0)}, 1e-5).max_rel_err <= 1e-4);

  auto tri_fn = [](Tape& t, std::vector<Tensor>& v) {
    return triplet_batch_hard(t, v[0], {0, 0, 1, 1, 2, 2}, 0.3);
  };
  CHECK(grad_check(tri_fn, {random_tensor({6, 3}, rng)}, 1e-5).max_rel_err <= 1e-4);
}
