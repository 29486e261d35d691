#include <doctest.h>

#include <cmath>
#include <random>

#include "cellseg/autodiff.hpp"
#include "op_gradcheck_suite.hpp"

using namespace cellseg;
using namespace cellseg::ad;
using testing::check_gradients;
using testing::random_one_hot;
using testing::random_tensor;

namespace {

constexpr int kInstances = 20;
constexpr double kTol = 1e-4;
constexpr double kStep = 1e-3;

}  // namespace

TEST_CASE("backward examples") {
  SUBCASE("relu gate") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 2}, {-1.0, 2.0}), true);
    backward(sum(relu(x)));
    CHECK(x.grad().vec() == std::vector<double>{0.0, 1.0});
  }
  SUBCASE("zero-weighted loss gives zero gradients") {
    std::mt19937_64 rng(1);
    auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 3, 3}, rng), true);
    backward(affine(sum(x), 0.0, 0.0));
    const auto g = x.grad();
    for (double v : g.vec()) CHECK(v == 0.0);
  }
  SUBCASE("repeated calls accumulate leaf gradients") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 3}, {1.0, -2.0, 3.0}), true);
    auto loss = sum(affine(x, 2.0, 0.0));
    backward(loss);
    backward(loss);
    CHECK(x.grad().vec() == std::vector<double>{4.0, 4.0, 4.0});
    x.zero_grad();
    backward(loss);
    CHECK(x.grad().vec() == std::vector<double>{2.0, 2.0, 2.0});
  }
  SUBCASE("non-scalar backward is a usage error") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 2, 2}), true);
    CHECK_THROWS_AS(backward(relu(x)), UsageError);
  }
  SUBCASE("shared subexpression receives both contributions") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 1}, {3.0}), true);
    auto y = affine(x, 2.0, 0.0);
    backward(sum(add(y, y)));
    CHECK(x.grad()[0] == 4.0);
  }
  SUBCASE("ops on non-grad inputs record nothing") {
    auto x = Var<double>::leaf(Tensor<double>(Shape{1, 1, 2, 2}, 1.0), false);
    auto y = relu(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }
}

TEST_CASE("shape errors") {
  auto a = Var<float>::leaf(Tensor<float>(Shape{1, 32, 8, 8}));
  auto b = Var<float>::leaf(Tensor<float>(Shape{1, 64, 8, 8}));
  CHECK(concat_channels(a, b).shape() == Shape{1, 96, 8, 8});
  auto c = Var<float>::leaf(Tensor<float>(Shape{1, 64, 4, 4}));
  CHECK_THROWS_AS(concat_channels(a, c), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  auto up = upsample(Var<float>::leaf(Tensor<float>(Shape{1, 128, 16, 16})), 2, Upsample::kNearest);
  CHECK(up.shape() == Shape{1, 128, 32, 32});
}

TEST_CASE("conv2d gradient, documented example") {
  std::mt19937_64 rng(11);
  auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 5, 5}, rng), true);
  auto w = Var<double>::leaf(random_tensor(Shape{3, 2, 3, 3}, rng), true);
  auto b = Var<double>::leaf(random_tensor(Shape{1, 1, 1, 3}, rng), true);
  auto r = random_tensor(Shape{1, 3, 5, 5}, rng);
  auto res = check_gradients([&] { return dot(conv2d(x, w, b, 1, 1), r); }, {x, w, b}, kStep, 1000, rng);
  CHECK(res.max_rel_err < kTol);
}

TEST_CASE("finite-difference checks, 20 random instances per op") {
  for (const auto& c : testing::op_gradcheck_suite(kInstances, 2024)) {
    CAPTURE(c.op);
    CHECK(c.instances == kInstances);
    CHECK(c.max_rel_err < kTol);
  }
}

TEST_CASE("loss values") {
  SUBCASE("uniform softmax cross-entropy is ln 3") {
    std::mt19937_64 rng(5);
    auto z = Var<double>::leaf(Tensor<double>(Shape{2, 3, 4, 4}, 0.7));
    auto t = random_one_hot(z.shape(), rng);
    CHECK(std::abs(softmax_cross_entropy(z, t).item() - std::log(3.0)) < 1e-6);
  }
  SUBCASE("perfect predictions drive dice and tversky to one") {
    std::mt19937_64 rng(6);
    auto t = random_one_hot(Shape{1, 4, 8, 8}, rng);
    auto p = Var<double>::leaf(t);
    CHECK(soft_dice(p, t, 1.0).item() == doctest::Approx(1.0));
    CHECK(tversky(p, t, 0.3, 0.7, 1.0).item() == doctest::Approx(1.0));
    CHECK(mean_abs_error(p, t).item() == 0.0);
  }
  SUBCASE("tversky alpha weighs false positives") {
    // One class, target all zeros except one pixel; prediction fires everywhere.
    Tensor<double> t(Shape{1, 1, 1, 4}, {1, 0, 0, 0});
    auto p = Var<double>::leaf(Tensor<double>(Shape{1, 1, 1, 4}, 1.0));
    // TP = 1, FP = 3, FN = 0 -> (1 + s) / (1 + 0.3 * 3 + s) with s = 0.
    CHECK(tversky(p, t, 0.3, 0.7, 0.0).item() == doctest::Approx(1.0 / 1.9));
    CHECK(tversky(p, t, 0.7, 0.3, 0.0).item() == doctest::Approx(1.0 / 3.1));
  }
}

TEST_CASE("forward results are bit-identical across runs") {
  std::mt19937_64 rng(9);
  auto x = Var<float>::leaf(random_tensor(Shape{2, 8, 16, 16}, rng).cast<float>());
  auto w = Var<float>::leaf(random_tensor(Shape{16, 8, 3, 3}, rng).cast<float>());
  auto b = Var<float>::leaf(random_tensor(Shape{1, 1, 1, 16}, rng).cast<float>());
  auto run = [&] { return softmax_channels(upsample(relu(conv2d(x, w, b, 1, 1)), 2, Upsample::kBilinear)).value(); };
  CHECK(run() == run());
}

TEST_CASE("the checker flags a wrong gradient despite step retries") {
  std::mt19937_64 rng(5);
  auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 3, 3}, rng), true);
  const auto r = random_tensor(x.shape(), rng);
  auto doubled = r;
  for (auto& v : doubled.vec()) v *= 2;
  // the taped call (used for backward) differs from the probed ones by 2x
  int calls = 0;
  auto fn = [&] { return dot(x, calls++ == 0 ? r : doubled); };
  const auto res = testing::check_gradients(fn, {x}, kStep, 100, rng);
  CHECK(res.max_rel_err > 0.4);
  CHECK(res.worst_numeric == doctest::Approx(2 * res.worst_analytic));
}
