#include <filesystem>

#include "doctest.h"
#include "dreid/cdm.hpp"
#include "dreid/common.hpp"
#include "dreid/rng.hpp"
#include "dreid/tensor.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dreid;
namespace fs = std::filesystem;
using testutil::random_tensor;

namespace {

std::string temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("dreid_cdm_test_" + std::to_string(counter++));
  fs::create_directories(p);
  return p.string();
}

ParsingMap random_parsing(int h, int w, CounterRng& rng) {
  ParsingMap m{h, w, {}};
  m.labels.resize(static_cast<std::size_t>(h) * w);
  for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng.uniform_int(20));
  return m;
}

}  // namespace

TEST_CASE("keep table: default kept set and overrides") {
  KeepTable t = KeepTable::lip_default();
  CHECK(t.entries().size() == 20);
  CHECK(t.kept(kBackground));
  CHECK(t.kept(kHair));
  CHECK(t.kept(kFace));
  CHECK(t.kept(kLeftArm));
  CHECK(t.kept(kRightShoe));
  CHECK_FALSE(t.kept(kUpperClothes));
  CHECK_FALSE(t.kept(kPants));
  CHECK(t.kept_labels() == std::vector<int>{0, 2, 13, 14, 15, 16, 17, 18, 19});

  KeepTable only_face = KeepTable::with_kept_labels({13});
  CHECK(only_face.kept(13));
  CHECK_FALSE(only_face.kept(2));
  CHECK_THROWS_AS(KeepTable::with_kept_labels({20}), ValidationError);
}

TEST_CASE("build_grayscale: worked 2x2 example") {
  ParsingMap p{2, 2, {5, 13, 0, 2}};
  DisentangleMask m = build_grayscale(p, KeepTable::lip_default());
  CHECK(m.at(0, 0) == 0.0);  // Upper-clothes dropped
  CHECK(m.at(0, 1) == doctest::Approx(13.0 / 19).epsilon(1e-12));
  CHECK(m.at(1, 0) == 0.0);  // Background keeps value 0 either way
  CHECK(m.at(1, 1) == doctest::Approx(2.0 / 19).epsilon(1e-12));
  CHECK(m.at(0, 1) == doctest::Approx(0.68421).epsilon(1e-4));
  CHECK(m.at(1, 1) == doctest::Approx(0.10526).epsilon(1e-4));
}

TEST_CASE("build_grayscale: all-clothing map gives an all-zero mask") {
  ParsingMap p{2, 3, {5, 6, 7, 9, 12, 5}};
  DisentangleMask m = build_grayscale(p, KeepTable::lip_default());
  for (double v : m.values) CHECK(v == 0.0);
}

TEST_CASE("build_grayscale matches per-pixel lookup oracle and is idempotent") {
  CounterRng rng(1);
  KeepTable table = KeepTable::lip_default();
  ParsingMap p = random_parsing(6, 5, rng);
  DisentangleMask m = build_grayscale(p, table);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 5; ++x) {
      int label = p.at(y, x);
      double expect = table.kept(label) ? label / 19.0 : 0.0;
      CHECK(m.at(y, x) == expect);
      CHECK(m.at(y, x) >= 0.0);
      CHECK(m.at(y, x) <= 1.0);
    }
  // Re-applying the kept/dropped rule to the mask's implied labels changes
  // nothing: kept pixels keep label/19, dropped pixels are already 0.
  DisentangleMask again = build_grayscale(p, table);
  CHECK(again.values == m.values);
}

TEST_CASE("parsing map io: round trip and range validation") {
  std::string dir = temp_dir();
  CounterRng rng(2);
  KeepTable table = KeepTable::lip_default();

  ParsingMap p = random_parsing(8, 4, rng);
  save_parsing_map(p, dir + "/p.png");
  ParsingMap back = load_parsing_map(dir + "/p.png", table);
  CHECK(back.labels == p.labels);
  CHECK(back.height == 8);
  CHECK(back.width == 4);

  ParsingMap bad{2, 2, {0, 20, 1, 2}};
  save_parsing_map(bad, dir + "/bad.png");
  CHECK_THROWS_WITH_AS(load_parsing_map(dir + "/bad.png", table),
                       doctest::Contains("(x=1, y=0)"), ValidationError);

  CHECK_THROWS_AS(load_parsing_map(dir + "/missing.png", table), IoError);
}

TEST_CASE("resize_mask: constant, box average, block-mean oracle") {
  DisentangleMask c{4, 4, std::vector<double>(16, 0.5)};
  DisentangleMask small = resize_mask(c, 2, 2);
  for (double v : small.values) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

  DisentangleMask q{2, 2, {1, 0, 0, 1}};
  CHECK(resize_mask(q, 1, 1).values[0] == doctest::Approx(0.5).epsilon(1e-15));

  CounterRng rng(3);
  DisentangleMask r{8, 8, {}};
  r.values.resize(64);
  for (auto& v : r.values) v = rng.uniform();
  DisentangleMask down = resize_mask(r, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      double mean = (r.at(2 * y, 2 * x) + r.at(2 * y, 2 * x + 1) + r.at(2 * y + 1, 2 * x) +
                     r.at(2 * y + 1, 2 * x + 1)) /
                    4.0;
      CHECK(down.at(y, x) == doctest::Approx(mean).epsilon(1e-12));
    }
  for (double v : down.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("mask_stem: zero mask, identity-like kernel, conv oracle") {
  Tape tape;

  // zero mask, zero bias -> zero feature map
  Tensor zero_mask = Tensor::zeros({1, 1, 8, 4});
  Tensor w = Tensor::zeros({2, 1, 3, 3});
  Tensor b = Tensor::zeros({2});
  Tensor f = mask_stem(tape, zero_mask, w, b, 1, 8, 4);
  for (double v : f.data()) CHECK(v == 0.0);

  // identity-like 1x1 kernel replicates the mask per channel
  CounterRng rng(4);
  Tensor m = random_tensor({1, 1, 6, 4}, rng, 0.0, 1.0);
  Tensor w1 = Tensor::full({3, 1, 1, 1}, 1.0);
  Tensor b1 = Tensor::zeros({3});
  Tensor rep = mask_stem(tape, m, w1, b1, 1, 6, 4);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 4; ++x) CHECK(rep.at(0, c, y, x) == m.at(0, 0, y, x));

  // random mask matches the conv2d oracle on the 1-channel image
  Tensor wr = random_tensor({2, 1, 3, 3}, rng);
  Tensor br = random_tensor({2}, rng);
  Tensor got = mask_stem(tape, m, wr, br, 1, 6, 4);
  Tensor ref = oracle::conv2d_ref(m, wr, br, 1, 1);
  CHECK(testutil::max_abs_diff(got.data(), ref.data()) <= 1e-12);

  // resolution mismatch rejected
  CHECK_THROWS_WITH_AS(mask_stem(tape, m, wr, br, 1, 3, 2), doctest::Contains("stage-1"),
                       ValidationError);
}

TEST_CASE("fuse: additive identities hold bitwise") {
  CounterRng rng(5);
  Tape tape;
  Tensor a = random_tensor({1, 2, 3, 3}, rng);
  Tensor zero = Tensor::zeros({1, 2, 3, 3});
  CHECK(fuse(tape, a, zero).data() == a.data());
  CHECK(fuse(tape, zero, a).data() == a.data());

  Tensor b = random_tensor({1, 2, 3, 3}, rng);
  Tensor sum = fuse(tape, a, b);
  for (std::size_t i = 0; i < sum.data().size(); ++i)
    CHECK(sum.data()[i] == a.data()[i] + b.data()[i]);

  CHECK_THROWS_AS(fuse(tape, a, Tensor::zeros({1, 2, 3, 4})), ValidationError);
}
