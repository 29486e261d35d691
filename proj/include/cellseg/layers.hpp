#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cellseg/autodiff.hpp"

namespace cellseg {

template <class T>
using ParamList = std::vector<std::pair<std::string, ad::Var<T>>>;

template <class T>
struct Conv {
  ad::Var<T> weight;  // (c_out, c_in, k, k)
  ad::Var<T> bias;    // (1, 1, 1, c_out)
  std::size_t stride = 1;
  std::size_t pad = 0;

  ad::Var<T> operator()(const ad::Var<T>& x) const { return ad::conv2d(x, weight, bias, stride, pad); }

  void append_params(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
  static std::size_t param_count(std::size_t c_in, std::size_t c_out, std::size_t k) {
    return c_out * c_in * k * k + c_out;
  }
};

// Kaiming-uniform weights, U(-b, b) with b = sqrt(6 / fan_in), and zero bias.
// Draws in double so float and double models built from one seed agree.
template <class T>
Conv<T> make_conv(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride, std::size_t pad,
                  std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(c_in * k * k));
  std::uniform_real_distribution<double> d(-bound, bound);
  Tensor<T> w(Shape{c_out, c_in, k, k});
  for (auto& v : w.vec()) v = static_cast<T>(d(rng));
  return {ad::Var<T>::leaf(std::move(w), true), ad::Var<T>::leaf(Tensor<T>(Shape{1, 1, 1, c_out}), true), stride,
          pad};
}

template <class T>
void set_requires_grad(const ParamList<T>& params, bool on) {
  for (auto [name, v] : params) v.set_requires_grad(on);
}

template <class T>
std::size_t count_params(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, v] : params) n += v.value().size();
  return n;
}

}  // namespace cellseg
