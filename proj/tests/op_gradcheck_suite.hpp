#pragma once

// Finite-difference checks over every differentiable op, `instances` random
// problems each. Shared by the autodiff unit tests and the acceptance binary.

#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace cellseg::testing {

struct OpCheck {
  std::string op;
  std::size_t instances = 0;
  double max_rel_err = 0.0;
};

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Inputs bounded away from zero so a +/-step perturbation never crosses a kink.
inline Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = random_tensor(s, rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.vec()) v = sign(rng) ? v : -v;
  return t;
}

}  // namespace detail

inline std::vector<OpCheck> op_gradcheck_suite(std::size_t instances, std::uint64_t seed) {
  using namespace ad;
  using detail::away_from_zero;
  using detail::pick;
  constexpr double kStep = 1e-3;
  std::mt19937_64 rng(seed);
  std::vector<OpCheck> out;
  auto run = [&](const std::string& name, const std::function<double()>& one) {
    OpCheck c{name, instances, 0.0};
    for (std::size_t i = 0; i < instances; ++i) c.max_rel_err = std::max(c.max_rel_err, one());
    out.push_back(c);
  };

  run("conv2d", [&] {
    const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 4), k = pick(rng, 0, 1) ? 3 : 1;
    const std::size_t stride = pick(rng, 1, 2), pad = k == 3 ? pick(rng, 0, 1) : 0, hw = pick(rng, 4, 6);
    auto x = Var<double>::leaf(random_tensor(Shape{pick(rng, 1, 2), cin, hw, hw}, rng), true);
    auto w = Var<double>::leaf(random_tensor(Shape{cout, cin, k, k}, rng), true);
    auto b = Var<double>::leaf(random_tensor(Shape{1, 1, 1, cout}, rng), true);
    auto r = random_tensor(conv2d(x, w, b, stride, pad).shape(), rng);
    return check_gradients([&] { return dot(conv2d(x, w, b, stride, pad), r); }, {x, w, b}, kStep, 200, rng)
        .max_rel_err;
  });
  run("relu", [&] {
    auto x = Var<double>::leaf(away_from_zero(Shape{1, 2, 3, 4}, rng), true);
    auto r = random_tensor(x.shape(), rng);
    return check_gradients([&] { return dot(relu(x), r); }, {x}, kStep, 100, rng).max_rel_err;
  });
  run("sigmoid", [&] {
    auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 3, 4}, rng, -4, 4), true);
    auto r = random_tensor(x.shape(), rng);
    return check_gradients([&] { return dot(sigmoid(x), r); }, {x}, kStep, 100, rng).max_rel_err;
  });
  run("add", [&] {
    const std::size_t hw = pick(rng, 2, 4);
    auto a = Var<double>::leaf(random_tensor(Shape{2, 2, hw, hw}, rng), true);
    auto b = Var<double>::leaf(random_tensor(Shape{2, 2, hw, hw}, rng), true);
    auto r = random_tensor(a.shape(), rng);
    return check_gradients([&] { return dot(add(a, b), r); }, {a, b}, kStep, 100, rng).max_rel_err;
  });
  run("concat_channels", [&] {
    const std::size_t hw = pick(rng, 2, 4);
    auto a = Var<double>::leaf(random_tensor(Shape{2, 2, hw, hw}, rng), true);
    auto c = Var<double>::leaf(random_tensor(Shape{2, 3, hw, hw}, rng), true);
    auto r = random_tensor(Shape{2, 5, hw, hw}, rng);
    return check_gradients([&] { return dot(concat_channels(a, c), r); }, {a, c}, kStep, 100, rng).max_rel_err;
  });
  for (const auto mode : {Upsample::kNearest, Upsample::kBilinear}) {
    run(mode == Upsample::kNearest ? "upsample_nearest" : "upsample_bilinear", [&] {
      const std::size_t f = pick(rng, 1, 4);
      auto x = Var<double>::leaf(random_tensor(Shape{1, 2, pick(rng, 2, 4), pick(rng, 2, 4)}, rng), true);
      auto r = random_tensor(upsample(x, f, mode).shape(), rng);
      return check_gradients([&] { return dot(upsample(x, f, mode), r); }, {x}, kStep, 100, rng).max_rel_err;
    });
  }
  run("softmax_channels", [&] {
    auto x = Var<double>::leaf(random_tensor(Shape{1, pick(rng, 2, 5), 3, 3}, rng, -3, 3), true);
    auto r = random_tensor(x.shape(), rng);
    return check_gradients([&] { return dot(softmax_channels(x), r); }, {x}, kStep, 100, rng).max_rel_err;
  });
  run("sum_affine_weighted_sum", [&] {
    auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 2, 3}, rng), true);
    auto y = Var<double>::leaf(random_tensor(Shape{1, 2, 2, 3}, rng), true);
    const double wa = random_tensor(Shape{1, 1, 1, 1}, rng)[0];
    auto fn = [&] {
      std::vector<Var<double>> terms{sum(x), affine(sum(y), -1.5, 0.3)};
      std::vector<double> ws{wa, 2.5};
      return weighted_sum<double>(terms, ws);
    };
    return check_gradients(fn, {x, y}, kStep, 100, rng).max_rel_err;
  });
  run("softmax_cross_entropy", [&] {
    Shape s{pick(rng, 1, 2), pick(rng, 2, 6), 3, 3};
    auto z = Var<double>::leaf(random_tensor(s, rng, -3, 3), true);
    auto t = random_one_hot(s, rng);
    return check_gradients([&] { return softmax_cross_entropy(z, t); }, {z}, kStep, 200, rng).max_rel_err;
  });
  run("soft_dice", [&] {
    Shape s{pick(rng, 1, 2), pick(rng, 2, 5), 3, 4};
    auto z = Var<double>::leaf(random_tensor(s, rng, -2, 2), true);
    auto t = random_one_hot(s, rng);
    return check_gradients([&] { return soft_dice(softmax_channels(z), t, 1.0); }, {z}, kStep, 200, rng).max_rel_err;
  });
  run("tversky", [&] {
    Shape s{pick(rng, 1, 2), pick(rng, 2, 5), 3, 4};
    auto z = Var<double>::leaf(random_tensor(s, rng, -2, 2), true);
    auto t = random_one_hot(s, rng);
    return check_gradients([&] { return tversky(softmax_channels(z), t, 0.3, 0.7, 1.0); }, {z}, kStep, 200, rng)
        .max_rel_err;
  });
  run("mean_abs_error", [&] {
    auto t = random_tensor(Shape{1, 4, 3, 3}, rng, 0, 1);
    auto offset = away_from_zero(t.shape(), rng);
    Tensor<double> p0 = t;
    for (std::size_t j = 0; j < p0.size(); ++j) p0[j] += offset[j];
    auto p = Var<double>::leaf(p0, true);
    return check_gradients([&] { return mean_abs_error(p, t); }, {p}, kStep, 100, rng).max_rel_err;
  });
  run("conv_relu_upsample_ce_chain", [&] {
    auto x = Var<double>::leaf(random_tensor(Shape{1, 2, 4, 4}, rng), true);
    auto w = Var<double>::leaf(random_tensor(Shape{3, 2, 3, 3}, rng), true);
    auto b = Var<double>::leaf(random_tensor(Shape{1, 1, 1, 3}, rng), true);
    auto t = random_one_hot(Shape{1, 3, 8, 8}, rng);
    auto fn = [&] {
      auto h = upsample(relu(conv2d(x, w, b, 1, 1)), 2, Upsample::kBilinear);
      return softmax_cross_entropy(h, t);
    };
    return check_gradients(fn, {x, w, b}, 1e-4, 200, rng).max_rel_err;
  });
  return out;
}

}  // namespace cellseg::testing
