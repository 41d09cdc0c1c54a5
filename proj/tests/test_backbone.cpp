#include <filesystem>

#include "doctest.h"
#include "dreid/backbone.hpp"
#include "dreid/common.hpp"
#include "dreid/rng.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace dreid;
namespace fs = std::filesystem;
using testutil::random_tensor;

namespace {

BackboneConfig micro() {
  BackboneConfig cfg;
  cfg.input_h = 16;
  cfg.input_w = 8;
  cfg.stem_channels = 2;
  cfg.stages = {{{2, 1, 2}, {3, 1, 2}, {4, 1, 2}, {5, 1, 1}}};
  cfg.num_classes = 4;
  return cfg;
}

}  // namespace

TEST_CASE("config validation: stage-4 stride, channel order, halvable extents") {
  BackboneConfig cfg = micro();
  cfg.validate();

  BackboneConfig bad = micro();
  bad.stages[3].stride = 2;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("stage-4"), ValidationError);

  bad = micro();
  bad.stages[1].channels = 1;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("nondecreasing"), ValidationError);

  bad = micro();
  bad.input_w = 6;  // 6 -> 3, not halvable at stage 2
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("halved"), ValidationError);
}

TEST_CASE("stage output sizes follow the stride plan") {
  BackboneConfig cfg = micro();
  CHECK(cfg.stage_output_hw(0) == std::pair<int, int>{8, 4});
  CHECK(cfg.stage_output_hw(1) == std::pair<int, int>{4, 2});
  CHECK(cfg.stage_output_hw(2) == std::pair<int, int>{2, 1});
  CHECK(cfg.stage_output_hw(3) == std::pair<int, int>{2, 1});  // stride-1 stage
  CHECK(cfg.embed_dim() == 5);

  BackboneConfig def;  // defaults: 64x32, channels 16..128
  def.num_classes = 20;
  def.validate();
  CHECK(def.stage_output_hw(2) == std::pair<int, int>{8, 4});
  CHECK(def.stage_output_hw(3) == std::pair<int, int>{8, 4});
  CHECK(def.embed_dim() == 128);
}

TEST_CASE("zero params: zero embedding, logits equal the classifier bias") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(1));
  for_each_param(p, [](const std::string&, Tensor& t) {
    for (auto& v : t.data()) v = 0.0;
  });
  p.fc_b = Tensor({4}, {0.5, -1.0, 2.0, 0.0});

  CounterRng rng(2);
  Tensor images = random_tensor({2, 3, 16, 8}, rng, 0.0, 1.0);
  Tape tape;
  ForwardResult out = forward(tape, images, nullptr, p, cfg);
  for (double v : out.embedding.data()) CHECK(v == 0.0);
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 4; ++k) CHECK(out.logits.at(n, k) == p.fc_b.at(k));
}

TEST_CASE("absent mask equals all-zero mask with a zero-initialized mask stem") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(3));
  for (auto& v : p.mask_w.data()) v = 0.0;
  for (auto& v : p.mask_b.data()) v = 0.0;

  CounterRng rng(4);
  Tensor images = random_tensor({2, 3, 16, 8}, rng, 0.0, 1.0);
  Tensor zero_mask = Tensor::zeros({2, 1, 16, 8});

  Tape t1, t2;
  ForwardResult without = forward(t1, images, nullptr, p, cfg);
  ForwardResult with = forward(t2, images, &zero_mask, p, cfg);
  CHECK(without.embedding.data() == with.embedding.data());
  CHECK(without.logits.data() == with.logits.data());
}

TEST_CASE("mask with zero mask-stem weights leaves the embedding unchanged") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(5));
  for (auto& v : p.mask_w.data()) v = 0.0;

  CounterRng rng(6);
  Tensor images = random_tensor({1, 3, 16, 8}, rng, 0.0, 1.0);
  Tensor mask = random_tensor({1, 1, 16, 8}, rng, 0.0, 1.0);

  Tape t1, t2;
  CHECK(forward(t1, images, nullptr, p, cfg).embedding.data() ==
        forward(t2, images, &mask, p, cfg).embedding.data());
}

TEST_CASE("gca mode ablation changes values but never shapes") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(7));
  CounterRng rng(8);
  Tensor images = random_tensor({2, 3, 16, 8}, rng, 0.0, 1.0);

  Tape t1;
  ForwardResult base = forward(t1, images, nullptr, p, cfg);

  BackboneConfig gated = cfg;
  gated.gca_modes = {GcaMode::kGateOnly, GcaMode::kGateOnly, GcaMode::kGateOnly,
                     GcaMode::kGateOnly};
  Tape t2;
  ForwardResult alt = forward(t2, images, nullptr, p, gated);
  CHECK(alt.embedding.shape() == base.embedding.shape());
  CHECK(alt.logits.shape() == base.logits.shape());
  CHECK(alt.stage4.shape() == base.stage4.shape());
  CHECK(alt.embedding.data() != base.embedding.data());

  BackboneConfig plain = cfg;
  plain.use_gca = false;
  Tape t3;
  ForwardResult off = forward(t3, images, nullptr, p, plain);
  CHECK(off.embedding.shape() == base.embedding.shape());
}

TEST_CASE("forward is deterministic and stage4 spatial size equals stage3") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(9));
  CounterRng rng(10);
  Tensor images = random_tensor({2, 3, 16, 8}, rng, 0.0, 1.0);
  Tensor mask = random_tensor({2, 1, 16, 8}, rng, 0.0, 1.0);

  Tape t1, t2;
  ForwardResult a = forward(t1, images, &mask, p, cfg);
  ForwardResult b = forward(t2, images, &mask, p, cfg);
  CHECK(a.embedding.data() == b.embedding.data());
  CHECK(a.logits.data() == b.logits.data());
  CHECK(a.stage4.data() == b.stage4.data());

  auto [h3, w3] = cfg.stage_output_hw(2);
  CHECK(a.stage4.dim(2) == h3);
  CHECK(a.stage4.dim(3) == w3);
}

TEST_CASE("forward validates input and mask shapes with stage names") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(11));
  Tape tape;
  Tensor bad_input = Tensor::zeros({1, 3, 8, 8});
  CHECK_THROWS_WITH_AS(forward(tape, bad_input, nullptr, p, cfg),
                       doctest::Contains("configured"), ValidationError);
  Tensor ok = Tensor::zeros({1, 3, 16, 8});
  Tensor bad_mask = Tensor::zeros({1, 1, 8, 8});
  CHECK_THROWS_WITH_AS(forward(tape, ok, &bad_mask, p, cfg), doctest::Contains("mask"),
                       ValidationError);
}

TEST_CASE("pool_head: constant map, 1x1 identity, random oracle") {
  Tape tape;
  CHECK(pool_head(tape, Tensor::full({1, 3, 2, 2}, 2.5)).data() ==
        std::vector<double>{2.5, 2.5, 2.5});

  CounterRng rng(12);
  Tensor single = random_tensor({2, 4, 1, 1}, rng);
  CHECK(pool_head(tape, single).data() == single.data());

  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  Tensor got = pool_head(tape, x);
  auto mx = oracle::gmp_ref(x);
  auto av = oracle::gap_ref(x);
  for (std::size_t i = 0; i < got.data().size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(0.5 * (mx[i] + av[i])).epsilon(1e-12));
}

TEST_CASE("init: he weights, zero biases, averaging gca kernels") {
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(13));
  for (double v : p.stem_b.data()) CHECK(v == 0.0);
  for (double v : p.fc_b.data()) CHECK(v == 0.0);
  for (const auto& s : p.stages) {
    for (double v : s.gca_kernel.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
    bool any_nonzero = false;
    for (double v : s.conv1_w.data()) any_nonzero = any_nonzero || v != 0.0;
    CHECK(any_nonzero);
  }
  // deterministic given the seed
  ModelParams q = init_params(cfg, CounterRng(13));
  CHECK(q.stem_w.data() == p.stem_w.data());
  ModelParams r = init_params(cfg, CounterRng(14));
  CHECK(r.stem_w.data() != p.stem_w.data());
}

TEST_CASE("checkpoint round trip is exact; mismatches are rejected") {
  std::string dir = (fs::temp_directory_path() / "dreid_backbone_ckpt").string();
  fs::create_directories(dir);
  BackboneConfig cfg = micro();
  ModelParams p = init_params(cfg, CounterRng(15));
  std::string path = dir + "/model.bin";
  save_checkpoint(p, path);

  ModelParams q = load_checkpoint(path, cfg);
  for_each_param(p, [&](const std::string& name, const Tensor& t) {
    bool matched = false;
    for_each_param(q, [&](const std::string& qname, const Tensor& qt) {
      if (qname == name) {
        CHECK(qt.data() == t.data());
        matched = true;
      }
    });
    CHECK(matched);
  });

  BackboneConfig other = micro();
  other.stages[3].channels = 6;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, other), doctest::Contains("shape"), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.bin", cfg), IoError);
}
