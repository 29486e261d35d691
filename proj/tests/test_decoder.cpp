#include <doctest.h>

#include "cellseg/decoder.hpp"
#include "decoder_fixture.hpp"

using namespace cellseg;
using namespace cellseg::testing;

namespace {

FeaturePyramid<float> float_pyramid(std::array<Shape, 4> shapes, bool isotropic, std::mt19937_64& rng) {
  FeaturePyramid<float> p;
  p.isotropic = isotropic;
  for (std::size_t i = 0; i < 4; ++i) p.levels[i] = ad::Var<float>::leaf(random_tensor(shapes[i], rng).cast<float>());
  return p;
}

void zero_biases(const ParamList<float>& params) {
  for (auto [name, v] : params) {
    if (name.ends_with(".bias")) v.mutable_value().fill(0.0f);
  }
}

}  // namespace

TEST_CASE("isotropic dump levels are projected and upsampled to their reductions") {
  std::mt19937_64 rng(1);
  const Shape s{1, 1280, 16, 16};
  const auto pyr = float_pyramid({s, s, s, s}, true, rng);
  const Decoder<float> dec(DecoderConfig{}, {1280, 1280, 1280, 1280}, 3);
  const auto skips = dec.project_skips(pyr);
  CHECK(skips[0].shape() == Shape{1, 32, 128, 128});
  CHECK(skips[1].shape() == Shape{1, 64, 64, 64});
  CHECK(skips[2].shape() == Shape{1, 128, 32, 32});
  CHECK(skips[3].shape() == Shape{1, 256, 16, 16});

  const auto fused = dec.decode(skips);
  CHECK(fused.shape() == Shape{1, 32, 256, 256});
  const auto out = dec.heads(fused);
  CHECK(out.sm1_logits.shape() == Shape{1, 3, 256, 256});
  CHECK(out.sm2_logits.shape() == Shape{1, 6, 256, 256});
  CHECK(out.dm.shape() == Shape{1, 4, 256, 256});
}

TEST_CASE("hierarchical levels keep their grid when it already matches") {
  std::mt19937_64 rng(2);
  const auto pyr = float_pyramid({Shape{1, 16, 128, 128}, {1, 32, 64, 64}, {1, 64, 32, 32}, {1, 128, 16, 16}}, false, rng);
  const Decoder<float> dec(DecoderConfig{}, {16, 32, 64, 128}, 4);
  const auto skips = dec.project_skips(pyr);
  CHECK(skips[0].shape() == Shape{1, 32, 128, 128});
  CHECK(skips[3].shape() == Shape{1, 256, 16, 16});
}

TEST_CASE("decoder rejects levels that would need downsampling or fractional factors") {
  std::mt19937_64 rng(3);
  const Decoder<float> dec(DecoderConfig{}, {8, 8, 8, 8}, 4);
  const Shape big{1, 8, 32, 32};
  CHECK_THROWS_AS(dec.project_skips(float_pyramid({big, big, big, big}, true, rng), 256), ConfigError);
  const Shape odd{1, 8, 6, 6};
  CHECK_THROWS_AS(dec.project_skips(float_pyramid({odd, odd, odd, odd}, true, rng), 256), ConfigError);
  const Shape ok{1, 8, 16, 16};
  const Shape wrong_c{1, 9, 16, 16};
  CHECK_THROWS_AS(dec.project_skips(float_pyramid({ok, ok, ok, wrong_c}, false, rng), 256), ShapeError);
  CHECK_NOTHROW(dec.project_skips(float_pyramid({ok, ok, ok, ok}, true, rng), 256));
}

TEST_CASE("decoder config validation") {
  DecoderConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_types = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.input_size = 40;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.skip_reductions = {2, 4, 8, 32};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.skip_channels[1] = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(Decoder<float>(DecoderConfig{}, {8, 0, 8, 8}, 0), ConfigError);
}

TEST_CASE("head channel counts follow the number of types") {
  std::mt19937_64 rng(4);
  for (std::uint32_t t : {1u, 5u, 6u}) {
    DecoderConfig cfg;
    cfg.n_types = t;
    cfg.input_size = 32;
    const Decoder<float> dec(cfg, {4, 4, 4, 4}, 1);
    const Shape s{2, 4, 2, 2};
    const auto out = dec.forward(float_pyramid({s, s, s, s}, true, rng));
    CHECK(out.sm2_logits.shape() == Shape{2, t + 1, 32, 32});
    CHECK(out.sm1_logits.shape() == Shape{2, 3, 32, 32});
    for (float v : out.dm.value().vec()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("zero skips with zero biases give zero logits and half-valued distances") {
  DecoderConfig cfg;
  cfg.input_size = 64;
  const Decoder<float> dec(cfg, {8, 8, 8, 8}, 9);
  zero_biases(dec.params());
  FeaturePyramid<float> p;
  for (auto& l : p.levels) l = ad::Var<float>::leaf(Tensor4({1, 8, 4, 4}));
  p.isotropic = true;
  const auto out = dec.forward(p);
  for (float v : out.sm1_logits.value().vec()) CHECK(v == 0.0f);
  for (float v : out.sm2_logits.value().vec()) CHECK(v == 0.0f);
  for (float v : out.dm.value().vec()) CHECK(v == 0.5f);
}

TEST_CASE("the three heads are independent branches") {
  std::mt19937_64 rng(5);
  DecoderConfig cfg;
  cfg.input_size = 32;
  const Decoder<float> dec(cfg, {4, 4, 4, 4}, 2);
  const Shape s{1, 4, 2, 2};
  const auto pyr = float_pyramid({s, s, s, s}, true, rng);
  const auto before = dec.forward(pyr);
  for (auto [name, v] : dec.params()) {
    if (name.starts_with("head.sm2.")) v.mutable_value().fill(0.0f);
  }
  const auto after = dec.forward(pyr);
  CHECK(after.sm1_logits.value() == before.sm1_logits.value());
  CHECK(after.dm.value() == before.dm.value());
  CHECK_FALSE(after.sm2_logits.value() == before.sm2_logits.value());

  // A loss on one head sends no gradient into the others.
  const Decoder<double> dd(small_decoder_config(3), {3, 3, 3, 3}, 7);
  const auto dp = random_pyramid(true, 3, rng, false);
  const auto o = dd.forward(dp);
  ad::backward(ad::sum(o.dm));
  for (const auto& [name, v] : dd.params()) {
    CAPTURE(name);
    const bool other_head = name.starts_with("head.sm1.") || name.starts_with("head.sm2.");
    CHECK(v.has_grad() != other_head);
  }
}

TEST_CASE("parameter count matches a hand count") {
  const std::array<std::size_t, 4> in{1280, 1280, 1280, 1280};
  // projections 614880, fusion 580832, final 9248, head hiddens 27744, head outputs 429
  CHECK(Decoder<float>::parameter_count(DecoderConfig{}, in) == 1233133);
  const Decoder<float> dec(DecoderConfig{}, in, 0);
  CHECK(count_params(dec.params()) == 1233133);
  CHECK(dec.params().size() == 2 * (4 + 3 + 1 + 6));

  DecoderConfig c6;
  c6.n_types = 6;
  CHECK(Decoder<float>::parameter_count(c6, in) == 1233133 + 33);
}

TEST_CASE("decoder is deterministic for a seed and precision-consistent") {
  std::mt19937_64 rng(6);
  DecoderConfig cfg;
  cfg.input_size = 32;
  const Decoder<float> a(cfg, {4, 4, 4, 4}, 21), b(cfg, {4, 4, 4, 4}, 21);
  const Shape s{1, 4, 2, 2};
  const auto pyr = float_pyramid({s, s, s, s}, true, rng);
  CHECK(a.forward(pyr).sm2_logits.value() == b.forward(pyr).sm2_logits.value());
}

TEST_CASE("decoder and composite loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    CAPTURE(seed);
    const auto r = decoder_loss_gradcheck(seed, 4);
    CHECK(r.checked > 100);
    CHECK(r.max_rel_err < 1e-4);
  }
}
