#include <doctest.h>

#include <omp.h>

#include <random>

#include "cellseg/kernels.hpp"
#include "gradcheck.hpp"

using namespace cellseg;
using cellseg::kernels::Upsample;

namespace {

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

Tensor<float> random_float(Shape s, std::mt19937_64& rng) {
  return testing::random_tensor(s, rng).cast<float>();
}

}  // namespace

TEST_CASE("gemm matches the serial reference on ragged sizes") {
  std::mt19937_64 rng(1);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, {4, 32, 7}, {5, 33, 9}, {17, 70, 31}, {64, 100, 288}}) {
    auto a = testing::random_tensor(Shape{1, 1, std::size_t(m), std::size_t(k)}, rng);
    auto b = testing::random_tensor(Shape{1, 1, std::size_t(k), std::size_t(n)}, rng);
    auto c0 = testing::random_tensor(Shape{1, 1, std::size_t(m), std::size_t(n)}, rng);
    for (bool acc : {false, true}) {
      Tensor<double> c1 = c0, c2 = c0;
      kernels::gemm<double>(m, n, k, a.data(), b.data(), c1.data(), acc);
      kernels::reference::gemm<double>(m, n, k, a.data(), b.data(), c2.data(), acc);
      CHECK(max_abs_diff(c1, c2) < 1e-12);
    }
  }
}

TEST_CASE("conv2d forward and backward match the reference") {
  std::mt19937_64 rng(2);
  struct Case {
    std::size_t cin, cout, k, stride, pad, h;
  };
  for (Case c : {Case{2, 3, 3, 1, 1, 5}, Case{3, 16, 3, 2, 1, 8}, Case{5, 4, 1, 1, 0, 6}, Case{3, 8, 4, 4, 0, 8},
                 Case{1, 2, 3, 1, 0, 7}}) {
    auto x = testing::random_tensor(Shape{2, c.cin, c.h, c.h}, rng);
    auto w = testing::random_tensor(Shape{c.cout, c.cin, c.k, c.k}, rng);
    auto b = testing::random_tensor(Shape{1, 1, 1, c.cout}, rng);
    auto y1 = kernels::conv2d_forward<double>(x, w, b.span(), c.stride, c.pad);
    auto y2 = kernels::reference::conv2d_forward<double>(x, w, b.span(), c.stride, c.pad);
    CHECK(max_abs_diff(y1, y2) < 1e-12);

    auto g = testing::random_tensor(y1.shape(), rng);
    Tensor<double> gx1(x.shape()), gx2(x.shape()), gw1(w.shape()), gw2(w.shape());
    std::vector<double> gb1(c.cout), gb2(c.cout);
    kernels::conv2d_backward<double>(x, w, g, c.stride, c.pad, &gx1, &gw1, gb1);
    kernels::reference::conv2d_backward<double>(x, w, g, c.stride, c.pad, &gx2, &gw2, gb2);
    CHECK(max_abs_diff(gx1, gx2) < 1e-12);
    CHECK(max_abs_diff(gw1, gw2) < 1e-12);
    for (std::size_t i = 0; i < c.cout; ++i) CHECK(gb1[i] == doctest::Approx(gb2[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d examples") {
  SUBCASE("1x1 weight 2 doubles an all-ones image") {
    Tensor<float> x(Shape{1, 1, 3, 3}, 1.0f);
    Tensor<float> w(Shape{1, 1, 1, 1}, 2.0f);
    std::vector<float> b{0.0f};
    auto y = kernels::conv2d_forward<float>(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (float v : y.vec()) CHECK(v == 2.0f);
  }
  SUBCASE("channel projection of a 1280-channel grid") {
    std::mt19937_64 rng(3);
    auto x = random_float(Shape{1, 1280, 16, 16}, rng);
    auto w = random_float(Shape{64, 1280, 1, 1}, rng);
    auto y = kernels::conv2d_forward<float>(x, w, {}, 1, 0);
    CHECK(y.shape() == Shape{1, 64, 16, 16});
  }
  SUBCASE("identity 1x1 kernel is the identity map") {
    std::mt19937_64 rng(4);
    auto x = random_float(Shape{2, 4, 5, 6}, rng);
    Tensor<float> w(Shape{4, 4, 1, 1});
    for (std::size_t i = 0; i < 4; ++i) w.at(i, i, 0, 0) = 1.0f;
    CHECK(kernels::conv2d_forward<float>(x, w, {}, 1, 0) == x);
  }
  SUBCASE("channel mismatch is a shape error") {
    Tensor<float> x(Shape{1, 2, 4, 4});
    Tensor<float> w(Shape{3, 5, 3, 3});
    CHECK_THROWS_AS(kernels::conv2d_forward<float>(x, w, {}, 1, 1), ShapeError);
    CHECK_THROWS_AS(kernels::reference::conv2d_forward<float>(x, w, {}, 1, 1), ShapeError);
  }
}

TEST_CASE("upsample matches the reference and known bilinear values") {
  std::mt19937_64 rng(5);
  for (auto mode : {Upsample::kNearest, Upsample::kBilinear}) {
    for (std::size_t f : {1u, 2u, 3u, 8u}) {
      auto x = testing::random_tensor(Shape{2, 3, 4, 5}, rng);
      auto y1 = kernels::upsample_forward<double>(x, f, mode);
      auto y2 = kernels::reference::upsample_forward<double>(x, f, mode);
      CHECK(y1.shape() == Shape{2, 3, 4 * f, 5 * f});
      CHECK(max_abs_diff(y1, y2) < 1e-14);
      auto g = testing::random_tensor(y1.shape(), rng);
      Tensor<double> gx1(x.shape()), gx2(x.shape());
      kernels::upsample_backward<double>(g, f, mode, gx1);
      kernels::reference::upsample_backward<double>(g, f, mode, gx2);
      CHECK(max_abs_diff(gx1, gx2) < 1e-12);
    }
  }
  // Half-pixel centres: [0, 1] -> [0, 0.25, 0.75, 1].
  Tensor<double> row(Shape{1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
  auto up = kernels::upsample_forward<double>(row, 2, Upsample::kBilinear);
  CHECK(up.at(0, 0, 0, 0) == 0.0);
  CHECK(up.at(0, 0, 0, 1) == 0.25);
  CHECK(up.at(0, 0, 0, 2) == 0.75);
  CHECK(up.at(0, 0, 0, 3) == 1.0);
  CHECK(up.at(0, 0, 1, 2) == 0.75);
}

TEST_CASE("nearest upsample followed by average pooling recovers the input") {
  std::mt19937_64 rng(6);
  for (std::size_t f : {2u, 4u}) {
    auto x = random_float(Shape{1, 128, 16, 16}, rng);
    auto up = kernels::upsample_forward<float>(x, f, Upsample::kNearest);
    CHECK(up.shape() == Shape{1, 128, 16 * f, 16 * f});
    CHECK(kernels::avg_pool<float>(up, f) == x);
  }
}

TEST_CASE("softmax sums to one and matches the reference") {
  std::mt19937_64 rng(7);
  auto x = testing::random_tensor(Shape{1, 3, 4, 4}, rng, -5, 5);
  auto p = kernels::softmax_channels<double>(x);
  CHECK(max_abs_diff(p, kernels::reference::softmax_channels<double>(x)) < 1e-15);
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t xx = 0; xx < 4; ++xx) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += p.at(0, c, y, xx);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("parallel conv is bit-identical across runs and thread counts") {
  std::mt19937_64 rng(8);
  auto x = random_float(Shape{2, 32, 32, 32}, rng);
  auto w = random_float(Shape{48, 32, 3, 3}, rng);
  std::vector<float> b(48, 0.5f);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto y1 = kernels::conv2d_forward<float>(x, w, b, 1, 1);
  omp_set_num_threads(4);
  auto y2 = kernels::conv2d_forward<float>(x, w, b, 1, 1);
  auto y3 = kernels::conv2d_forward<float>(x, w, b, 1, 1);
  omp_set_num_threads(saved);
  CHECK(y1 == y2);
  CHECK(y2 == y3);
}
