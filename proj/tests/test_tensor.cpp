#include <cmath>

#include "doctest.h"
#include "dreid/common.hpp"
#include "dreid/parallel.hpp"
#include "dreid/rng.hpp"
#include "dreid/tensor.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dreid;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0}), ValidationError);
  CHECK_THROWS_AS(Tensor({0}, {}), ValidationError);
  Tensor t({2, 2}, {1, 2, 3, 4});
  CHECK(t.size() == 4);
  CHECK_THROWS_AS(t.value(), ValidationError);
  CHECK(Tensor::scalar(7.0).value() == 7.0);
}

TEST_CASE("conv2d: all-ones 3x3 gives 9") {
  Tape tape;
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = ops::conv2d(tape, x, w, b, 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 1, 1});
  CHECK(y.value() == 9.0);
}

TEST_CASE("conv2d: 1x1 identity kernel passes input through") {
  CounterRng rng(1);
  Tape tape;
  Tensor x = random_tensor({2, 1, 4, 5}, rng);
  Tensor w = Tensor::full({1, 1, 1, 1}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = ops::conv2d(tape, x, w, b, 1, 0);
  CHECK(y.data() == x.data());
}

TEST_CASE("conv2d: strided padded case matches the nested-loop oracle") {
  CounterRng rng(2);
  Tape tape;
  Tensor x = random_tensor({1, 2, 5, 5}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y = ops::conv2d(tape, x, w, b, 2, 1);
  Tensor ref = oracle::conv2d_ref(x, w, b, 2, 1);
  CHECK(y.shape() == ref.shape());
  CHECK(max_abs_diff(y.data(), ref.data()) <= 1e-12);
}

TEST_CASE("conv2d: kernel wider than the padded remainder (tiny extents)") {
  // w + pad <= k exercises the empty-span edge of the patch gather
  CounterRng rng(21);
  Tape tape;
  Tensor x = random_tensor({2, 3, 4, 2}, rng);
  Tensor w = random_tensor({4, 3, 4, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y = ops::conv2d(tape, x, w, b, 2, 1);
  Tensor ref = oracle::conv2d_ref(x, w, b, 2, 1);
  CHECK(y.shape() == ref.shape());
  CHECK(max_abs_diff(y.data(), ref.data()) <= 1e-12);
}

TEST_CASE("conv2d: shape errors name the offending dimension") {
  Tape tape;
  Tensor x = Tensor::zeros({1, 2, 5, 5});
  Tensor w = Tensor::zeros({3, 3, 3, 3});
  Tensor b = Tensor::zeros({3});
  CHECK_THROWS_WITH_AS(ops::conv2d(tape, x, w, b, 1, 0),
                       doctest::Contains("input channels"), ValidationError);
  Tensor w2 = Tensor::zeros({3, 2, 3, 3});
  CHECK_THROWS_WITH_AS(ops::conv2d(tape, x, w2, b, 3, 0), doctest::Contains("divisible"),
                       ValidationError);
  Tensor big = Tensor::zeros({3, 2, 7, 7});
  CHECK_THROWS_WITH_AS(ops::conv2d(tape, x, big, b, 1, 0), doctest::Contains("kernel does not fit"),
                       ValidationError);
}

TEST_CASE("conv2d results do not depend on the worker count") {
  CounterRng rng(3);
  Tensor x = random_tensor({4, 3, 6, 6}, rng);
  Tensor w = random_tensor({5, 3, 3, 3}, rng);
  Tensor b = random_tensor({5}, rng);

  auto run = [&](int threads) {
    set_thread_count(threads);
    Tape tape;
    Tensor xx = x, ww = w, bb = b;
    tape.watch(xx);
    tape.watch(ww);
    tape.watch(bb);
    Tensor y = ops::conv2d(tape, xx, ww, bb, 1, 1);
    tape.backward(ops::sum(tape, y));
    set_thread_count(0);
    return std::tuple{y.data(), xx.grad(), ww.grad(), bb.grad()};
  };
  CHECK(run(1) == run(4));
}

TEST_CASE("conv1d_channels: identity and averaging kernels") {
  Tape tape;
  Tensor v({4}, {1, 0, 0, 1});
  Tensor ident({3}, {0, 1, 0});
  CHECK(ops::conv1d_channels(tape, v, ident).data() == v.data());

  Tensor avg({3}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  Tensor y = ops::conv1d_channels(tape, Tensor({3}, {1, 1, 1}), avg);
  CHECK(y.at(0) == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(2) == doctest::Approx(2.0 / 3).epsilon(1e-12));

  CHECK_THROWS_AS(ops::conv1d_channels(tape, v, Tensor({2}, {1, 1})), ValidationError);
}

TEST_CASE("conv1d_channels matches the sliding-window oracle") {
  CounterRng rng(4);
  Tape tape;
  Tensor v = random_tensor({8}, rng);
  Tensor k = random_tensor({5}, rng);
  Tensor y = ops::conv1d_channels(tape, v, k);
  auto ref = oracle::conv1d_ref(v.data(), k.data());
  CHECK(max_abs_diff(y.data(), ref) <= 1e-12);
}

TEST_CASE("pooling: constants, handpicked and random oracles") {
  Tape tape;
  CHECK(ops::global_avg_pool(tape, Tensor::full({1, 2, 3, 3}, 3.0)).data() ==
        std::vector<double>{3.0, 3.0});
  CHECK(ops::global_max_pool(tape, Tensor::full({1, 2, 3, 3}, 3.0)).data() ==
        std::vector<double>{3.0, 3.0});

  Tensor half({1, 1, 2, 2}, {0, 1, 1, 0});
  CHECK(ops::global_avg_pool(tape, half).value() == 0.5);

  Tensor spike = Tensor::zeros({1, 1, 3, 3});
  spike.at(0, 0, 1, 2) = 7.0;
  CHECK(ops::global_max_pool(tape, spike).value() == 7.0);

  CounterRng rng(5);
  Tensor x = random_tensor({1, 3, 4, 4}, rng);
  CHECK(max_abs_diff(ops::global_avg_pool(tape, x).data(), oracle::gap_ref(x)) <= 1e-12);
  CHECK(ops::global_max_pool(tape, x).data() == oracle::gmp_ref(x));
}

TEST_CASE("global_max_pool ties route the subgradient to the first maximum") {
  Tape tape;
  Tensor x({1, 1, 2, 2}, {5.0, 5.0, 1.0, 5.0});
  tape.watch(x);
  Tensor y = ops::global_max_pool(tape, x);
  tape.backward(ops::sum(tape, y));
  CHECK(x.grad() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("activation examples") {
  Tape tape;
  CHECK(ops::sigmoid(tape, Tensor::scalar(0.0)).value() == 0.5);
  CHECK(ops::activation(tape, ActKind::kRelu, Tensor::scalar(-2.0)).value() == 0.0);
  CHECK(ops::activation(tape, ActKind::kSigmoid, Tensor::scalar(1.0)).value() ==
        doctest::Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("elementwise identities and broadcast oracle") {
  CounterRng rng(6);
  Tape tape;
  Tensor a = random_tensor({2, 3, 2, 2}, rng);
  CHECK(ops::mul(tape, a, Tensor::full({2, 3, 2, 2}, 1.0)).data() == a.data());
  for (double v : ops::mul(tape, a, Tensor::zeros({2, 3, 2, 2})).data()) CHECK(v == 0.0);

  Tensor w = random_tensor({2, 3}, rng);
  Tensor y = ops::elementwise(tape, EwKind::kMul, a, w);
  CHECK(y.data() == oracle::broadcast_mul_ref(a, w).data());

  CHECK_THROWS_WITH_AS(ops::add(tape, a, Tensor::zeros({3, 2})),
                       doctest::Contains("broadcastable"), ValidationError);
}

TEST_CASE("linear: identity, zero input, shape errors") {
  CounterRng rng(7);
  Tape tape;
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor x = random_tensor({2, 3}, rng);
  CHECK(ops::linear(tape, x, eye, Tensor::zeros({3})).data() == x.data());

  Tensor b = random_tensor({3}, rng);
  Tensor y0 = ops::linear(tape, Tensor::zeros({2, 3}), eye, b);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) CHECK(y0.at(i, j) == b.at(j));

  CHECK_THROWS_AS(ops::linear(tape, x, Tensor::zeros({4, 5}), b), ValidationError);
}

TEST_CASE("linear matches the triple-loop oracle") {
  CounterRng rng(8);
  Tape tape;
  Tensor x = random_tensor({3, 5}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor y = ops::linear(tape, x, w, b);
  CHECK(max_abs_diff(y.data(), oracle::linear_ref(x, w, b).data()) <= 1e-12);
}

TEST_CASE("backward: sum gives ones, sum of squares gives 2x") {
  CounterRng rng(9);
  Tape tape;
  Tensor x = random_tensor({2, 3}, rng);
  tape.watch(x);
  Tensor loss = ops::sum(tape, ops::mul(tape, x, x));
  tape.backward(loss);
  for (std::size_t i = 0; i < x.data().size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]).epsilon(1e-12));

  Tape tape2;
  Tensor y = random_tensor({4}, rng);
  tape2.watch(y);
  tape2.backward(ops::sum(tape2, y));
  CHECK(y.grad() == std::vector<double>(4, 1.0));
}

TEST_CASE("backward rejects non-scalar losses and foreign tensors") {
  Tape tape;
  Tensor x = Tensor::zeros({2, 2});
  tape.watch(x);
  CHECK_THROWS_AS(tape.backward(x), ValidationError);
  Tape other;
  Tensor s = ops::sum(other, x);
  CHECK_THROWS_AS(tape.backward(s), ValidationError);
}

TEST_CASE("backward: leaves off the loss path get exactly zero gradient") {
  CounterRng rng(10);
  Tape tape;
  Tensor x = random_tensor({3}, rng);
  Tensor unused = random_tensor({5}, rng);
  tape.watch(x);
  tape.watch(unused);
  tape.backward(ops::sum(tape, ops::sigmoid(tape, x)));
  CHECK(unused.grad() == std::vector<double>(5, 0.0));
}

TEST_CASE("backward twice on one record is bitwise identical") {
  CounterRng rng(11);
  Tape tape;
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor w = random_tensor({2, 2, 3, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  tape.watch(x);
  tape.watch(w);
  tape.watch(b);
  Tensor loss =
      ops::sum(tape, ops::sigmoid(tape, ops::global_avg_pool(
                                             tape, ops::conv2d(tape, x, w, b, 1, 1))));
  tape.backward(loss);
  auto gx = x.grad();
  auto gw = w.grad();
  tape.backward(loss);
  CHECK(x.grad() == gx);
  CHECK(w.grad() == gw);
}

TEST_CASE("grad_check: linear exact, sigmoid chain and relu within 1e-4") {
  CounterRng rng(12);

  auto linear_fn = [](Tape& t, std::vector<Tensor>& v) {
    return ops::sum(t, ops::scale(t, v[0], 3.0));
  };
  CHECK(grad_check(linear_fn, {random_tensor({6}, rng)}, 1e-5).max_rel_err <= 1e-10);

  auto sigmoid_chain = [](Tape& t, std::vector<Tensor>& v) {
    return ops::sum(t, ops::sigmoid(t, ops::sigmoid(t, v[0])));
  };
  CHECK(grad_check(sigmoid_chain, {random_tensor({3, 3}, rng)}, 1e-5).max_rel_err <= 1e-4);

  // relu probed away from the kink: |x| >= 0.1 >> 10 eps
  Tensor away = random_tensor({10}, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < away.data().size(); ++i)
    if (i % 2) away.data()[i] = -away.data()[i];
  auto relu_fn = [](Tape& t, std::vector<Tensor>& v) {
    Tensor r = ops::relu(t, v[0]);
    return ops::sum(t, ops::mul(t, r, r));
  };
  CHECK(grad_check(relu_fn, {away}, 1e-5).max_rel_err <= 1e-4);
}

TEST_CASE("grad_check: composite conv+pool+sigmoid graph vs finite differences") {
  CounterRng rng(13);
  std::vector<Tensor> inputs = {random_tensor({1, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng),
                                random_tensor({3}, rng)};
  auto f = [](Tape& t, std::vector<Tensor>& v) {
    Tensor c = ops::conv2d(t, v[0], v[1], v[2], 1, 1);
    Tensor p = ops::global_avg_pool(t, ops::sigmoid(t, c));
    return ops::sum(t, ops::mul(t, p, p));
  };
  auto rep = grad_check(f, std::move(inputs), 1e-5);
  CHECK(rep.finite);
  CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("grad_check reports non-finite evaluations") {
  auto f = [](Tape& t, std::vector<Tensor>& v) {
    Tensor big = ops::scale(t, v[0], 1e308);
    return ops::sum(t, ops::mul(t, big, big));
  };
  auto rep = grad_check(f, {Tensor::full({2}, 1e10)}, 1e-5);
  CHECK_FALSE(rep.finite);
}
