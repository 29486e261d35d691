#include "cellseg/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include <omp.h>

namespace cellseg::ad {

namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// Wraps a forward result. The node joins the tape only when some parent needs
// a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<NodePtr<T>> parents,
                   std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || (g_grad_enabled && p && p->requires_grad);
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <class T>
bool wants(const NodePtr<T>& p) {
  return p && p->requires_grad;
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  const auto n = static_cast<std::ptrdiff_t>(dst.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) d[i] += s[i];
}

Shape scalar_shape() { return Shape{1, 1, 1, 1}; }

template <class T>
void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

}  // namespace

template <class T>
T Var<T>::item() const {
  if (value().size() != 1) throw UsageError("item() on non-scalar tensor " + shape().str());
  return value()[0];
}

template <class T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined variable");
  if (loss.value().size() != 1) throw UsageError("backward requires a scalar loss, got " + loss.shape().str());
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Node<T>* n : order) {
    if (!n->leaf) n->grad = Tensor<T>();
  }
  loss.node()->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->leaf || !n->backward) continue;
    if (n->grad.empty()) continue;  // nothing flowed here
    n->backward(*n);
  }
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad) {
  std::span<const T> b;
  if (bias.defined()) b = bias.value().span();
  Tensor<T> out = kernels::conv2d_forward(x.value(), weight.value(), b, stride, pad);
  return make_result<T>(std::move(out), "conv2d", {x.node_ptr(), weight.node_ptr(), bias.node_ptr()},
                        [stride, pad](Node<T>& self) {
                          auto& xn = self.parents[0];
                          auto& wn = self.parents[1];
                          auto& bn = self.parents[2];
                          Tensor<T>* gx = wants(xn) ? &xn->grad_buffer() : nullptr;
                          Tensor<T>* gw = wants(wn) ? &wn->grad_buffer() : nullptr;
                          std::span<T> gb;
                          if (wants(bn)) gb = bn->grad_buffer().span();
                          kernels::conv2d_backward(xn->value, wn->value, self.grad, stride, pad, gx, gw, gb);
                        });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* s = x.value().data();
  T* d = out.data();
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) d[i] = s[i] > T{0} ? s[i] : T{0};
  return make_result<T>(std::move(out), "relu", {x.node_ptr()}, [](Node<T>& self) {
    auto& xn = self.parents[0];
    T* g = xn->grad_buffer().data();
    const T* y = self.value.data();
    const T* go = self.grad.data();
    const auto n = static_cast<std::ptrdiff_t>(self.value.size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) g[i] += y[i] > T{0} ? go[i] : T{0};
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.shape());
  const T* s = x.value().data();
  T* d = out.data();
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    // Split by sign so exp never overflows.
    if (s[i] >= T{0}) {
      d[i] = T{1} / (T{1} + std::exp(-s[i]));
    } else {
      const T e = std::exp(s[i]);
      d[i] = e / (T{1} + e);
    }
  }
  return make_result<T>(std::move(out), "sigmoid", {x.node_ptr()}, [](Node<T>& self) {
    auto& xn = self.parents[0];
    T* g = xn->grad_buffer().data();
    const T* y = self.value.data();
    const T* go = self.grad.data();
    const auto n = static_cast<std::ptrdiff_t>(self.value.size());
#pragma omp parallel for simd schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) g[i] += go[i] * y[i] * (T{1} - y[i]);
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same<T>(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  add_into(out, b.value());
  return make_result<T>(std::move(out), "add", {a.node_ptr(), b.node_ptr()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (wants(p)) add_into(p->grad_buffer(), self.grad);
    }
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t ia = sa.c * sa.plane(), ib = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().plane(n, 0), ia, out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), ib, out.plane(n, sa.c));
  }
  return make_result<T>(std::move(out), "concat", {a.node_ptr(), b.node_ptr()}, [sa, sb](Node<T>& self) {
    const std::size_t ia = sa.c * sa.plane(), ib = sb.c * sb.plane();
    for (std::size_t n = 0; n < sa.n; ++n) {
      if (wants(self.parents[0])) {
        T* g = self.parents[0]->grad_buffer().plane(n, 0);
        const T* src = self.grad.plane(n, 0);
        for (std::size_t i = 0; i < ia; ++i) g[i] += src[i];
      }
      if (wants(self.parents[1])) {
        T* g = self.parents[1]->grad_buffer().plane(n, 0);
        const T* src = self.grad.plane(n, sa.c);
        for (std::size_t i = 0; i < ib; ++i) g[i] += src[i];
      }
    }
  });
}

template <class T>
Var<T> upsample(const Var<T>& x, std::size_t factor, Upsample mode) {
  Tensor<T> out = kernels::upsample_forward(x.value(), factor, mode);
  return make_result<T>(std::move(out), "upsample", {x.node_ptr()}, [factor, mode](Node<T>& self) {
    kernels::upsample_backward(self.grad, factor, mode, self.parents[0]->grad_buffer());
  });
}

template <class T>
Var<T> softmax_channels(const Var<T>& x) {
  Tensor<T> out = kernels::softmax_channels(x.value());
  return make_result<T>(std::move(out), "softmax", {x.node_ptr()}, [](Node<T>& self) {
    const Shape s = self.value.shape();
    const std::size_t hw = s.plane();
    Tensor<T>& gx = self.parents[0]->grad_buffer();
    const auto pixels = static_cast<std::ptrdiff_t>(s.n * hw);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t q = 0; q < pixels; ++q) {
      const std::size_t b = static_cast<std::size_t>(q) / hw, i = static_cast<std::size_t>(q) % hw;
      const T* y = self.value.plane(b, 0) + i;
      const T* g = self.grad.plane(b, 0) + i;
      T* dst = gx.plane(b, 0) + i;
      T dot = 0;
      for (std::size_t c = 0; c < s.c; ++c) dot += g[c * hw] * y[c * hw];
      for (std::size_t c = 0; c < s.c; ++c) dst[c * hw] += y[c * hw] * (g[c * hw] - dot);
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  double acc = 0;
  for (T v : x.value().vec()) acc += v;
  return make_result<T>(Tensor<T>(scalar_shape(), static_cast<T>(acc)), "sum", {x.node_ptr()}, [](Node<T>& self) {
    const T g = self.grad[0];
    for (T& v : self.parents[0]->grad_buffer().vec()) v += g;
  });
}

template <class T>
Var<T> dot(const Var<T>& x, const Tensor<T>& weights) {
  require_same<T>(x.shape(), weights.shape(), "dot");
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.value()[i];
  return make_result<T>(Tensor<T>(scalar_shape(), static_cast<T>(acc)), "dot", {x.node_ptr()},
                        [weights](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
                        });
}

template <class T>
Var<T> affine(const Var<T>& x, T a, T b) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i] + b;
  return make_result<T>(std::move(out), "affine", {x.node_ptr()}, [a](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += a * self.grad[i];
  });
}

template <class T>
Var<T> weighted_sum(std::span<const Var<T>> terms, std::span<const T> weights) {
  if (terms.size() != weights.size()) throw UsageError("weighted_sum: terms/weights length mismatch");
  T acc = 0;
  std::vector<NodePtr<T>> parents;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    acc += weights[i] * terms[i].value()[0];
    parents.push_back(terms[i].node_ptr());
  }
  std::vector<T> w(weights.begin(), weights.end());
  return make_result<T>(Tensor<T>(scalar_shape(), acc), "weighted_sum", std::move(parents),
                        [w](Node<T>& self) {
                          for (std::size_t i = 0; i < w.size(); ++i) {
                            if (wants(self.parents[i])) self.parents[i]->grad_buffer()[0] += w[i] * self.grad[0];
                          }
                        });
}

template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, const Tensor<T>& target) {
  require_same<T>(logits.shape(), target.shape(), "softmax_cross_entropy");
  const Shape s = logits.shape();
  const std::size_t hw = s.plane();
  const std::size_t pixels = s.n * hw;
  Tensor<T> probs = kernels::softmax_channels(logits.value());
  // Per-pixel partial sums in a fixed layout, then a serial reduction.
  std::vector<T> per_pixel(pixels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(pixels); ++q) {
    const std::size_t b = static_cast<std::size_t>(q) / hw, i = static_cast<std::size_t>(q) % hw;
    const T* z = logits.value().plane(b, 0) + i;
    const T* t = target.plane(b, 0) + i;
    T mx = z[0];
    for (std::size_t c = 1; c < s.c; ++c) mx = std::max(mx, z[c * hw]);
    T se = 0;
    for (std::size_t c = 0; c < s.c; ++c) se += std::exp(z[c * hw] - mx);
    const T lse = mx + std::log(se);
    T acc = 0;
    for (std::size_t c = 0; c < s.c; ++c) acc += t[c * hw] * (lse - z[c * hw]);
    per_pixel[static_cast<std::size_t>(q)] = acc;
  }
  double total = 0;
  for (T v : per_pixel) total += v;
  const T inv = T{1} / static_cast<T>(pixels);
  return make_result<T>(Tensor<T>(scalar_shape(), static_cast<T>(total / static_cast<double>(pixels))), "cross_entropy", {logits.node_ptr()},
                        [probs = std::move(probs), target, inv](Node<T>& self) {
                          const Shape s = probs.shape();
                          const std::size_t hw = s.plane();
                          auto& g = self.parents[0]->grad_buffer();
                          const T scale = self.grad[0] * inv;
                          for (std::size_t b = 0; b < s.n; ++b) {
                            for (std::size_t i = 0; i < hw; ++i) {
                              T tsum = 0;
                              for (std::size_t c = 0; c < s.c; ++c) tsum += target.plane(b, c)[i];
                              for (std::size_t c = 0; c < s.c; ++c) {
                                g.plane(b, c)[i] += scale * (probs.plane(b, c)[i] * tsum - target.plane(b, c)[i]);
                              }
                            }
                          }
                        });
}

namespace {

struct ClassSums {
  std::vector<double> py, p, y;
};

template <class T>
ClassSums class_sums(const Tensor<T>& probs, const Tensor<T>& target) {
  const Shape s = probs.shape();
  ClassSums cs{std::vector<double>(s.c), std::vector<double>(s.c), std::vector<double>(s.c)};
  for (std::size_t c = 0; c < s.c; ++c) {
    double a = 0, b = 0, d = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* pp = probs.plane(n, c);
      const T* tt = target.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        a += pp[i] * tt[i];
        b += pp[i];
        d += tt[i];
      }
    }
    cs.py[c] = a;
    cs.p[c] = b;
    cs.y[c] = d;
  }
  return cs;
}

}  // namespace

template <class T>
Var<T> soft_dice(const Var<T>& probs, const Tensor<T>& target, T smooth) {
  require_same<T>(probs.shape(), target.shape(), "soft_dice");
  const ClassSums cs = class_sums(probs.value(), target);
  const std::size_t nc = probs.shape().c;
  T dice = 0;
  std::vector<T> num(nc), den(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    num[c] = static_cast<T>(2 * cs.py[c]) + smooth;
    den[c] = static_cast<T>(cs.p[c] + cs.y[c]) + smooth;
    dice += num[c] / den[c];
  }
  dice /= static_cast<T>(nc);
  return make_result<T>(Tensor<T>(scalar_shape(), dice), "soft_dice", {probs.node_ptr()},
                        [target, num, den](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          const Shape s = g.shape();
                          const T scale = self.grad[0] / static_cast<T>(s.c);
                          for (std::size_t c = 0; c < s.c; ++c) {
                            const T d2 = den[c] * den[c];
                            for (std::size_t n = 0; n < s.n; ++n) {
                              const T* tt = target.plane(n, c);
                              T* gg = g.plane(n, c);
                              for (std::size_t i = 0; i < s.plane(); ++i) {
                                gg[i] += scale * (T{2} * tt[i] * den[c] - num[c]) / d2;
                              }
                            }
                          }
                        });
}

template <class T>
Var<T> tversky(const Var<T>& probs, const Tensor<T>& target, T alpha, T beta, T smooth) {
  require_same<T>(probs.shape(), target.shape(), "tversky");
  if (!(alpha + beta > T{0})) throw ConfigError("tversky: alpha + beta must be > 0");
  const ClassSums cs = class_sums(probs.value(), target);
  const std::size_t nc = probs.shape().c;
  std::vector<T> num(nc), den(nc);
  T index = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    const double tp = cs.py[c], fp = cs.p[c] - cs.py[c], fn = cs.y[c] - cs.py[c];
    num[c] = static_cast<T>(tp) + smooth;
    den[c] = static_cast<T>(tp + alpha * fp + beta * fn) + smooth;
    index += num[c] / den[c];
  }
  index /= static_cast<T>(nc);
  return make_result<T>(Tensor<T>(scalar_shape(), index), "tversky", {probs.node_ptr()},
                        [target, num, den, alpha, beta](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          const Shape s = g.shape();
                          const T scale = self.grad[0] / static_cast<T>(s.c);
                          for (std::size_t c = 0; c < s.c; ++c) {
                            const T d2 = den[c] * den[c];
                            for (std::size_t n = 0; n < s.n; ++n) {
                              const T* tt = target.plane(n, c);
                              T* gg = g.plane(n, c);
                              for (std::size_t i = 0; i < s.plane(); ++i) {
                                const T y = tt[i];
                                const T dden = y + alpha * (T{1} - y) - beta * y;
                                gg[i] += scale * (y * den[c] - num[c] * dden) / d2;
                              }
                            }
                          }
                        });
}

template <class T>
Var<T> mean_abs_error(const Var<T>& pred, const Tensor<T>& target) {
  require_same<T>(pred.shape(), target.shape(), "mean_abs_error");
  double acc = 0;
  for (std::size_t i = 0; i < target.size(); ++i) acc += std::abs(pred.value()[i] - target[i]);
  const T inv = T{1} / static_cast<T>(target.size());
  return make_result<T>(Tensor<T>(scalar_shape(), static_cast<T>(acc / static_cast<double>(target.size()))), "mae", {pred.node_ptr()},
                        [target, inv](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          const auto& p = self.parents[0]->value;
                          const T scale = self.grad[0] * inv;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T d = p[i] - target[i];
                            g[i] += d > T{0} ? scale : (d < T{0} ? -scale : T{0});
                          }
                        });
}

#define CELLSEG_INSTANTIATE_AD(T)                                                                     \
  template class Var<T>;                                                                             \
  template void backward<T>(const Var<T>&);                                                          \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);   \
  template Var<T> relu<T>(const Var<T>&);                                                            \
  template Var<T> sigmoid<T>(const Var<T>&);                                                         \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> upsample<T>(const Var<T>&, std::size_t, Upsample);                                 \
  template Var<T> softmax_channels<T>(const Var<T>&);                                                \
  template Var<T> sum<T>(const Var<T>&);                                                             \
  template Var<T> affine<T>(const Var<T>&, T, T);                                                    \
  template Var<T> dot<T>(const Var<T>&, const Tensor<T>&);                                                    \
  template Var<T> weighted_sum<T>(std::span<const Var<T>>, std::span<const T>);                      \
  template Var<T> softmax_cross_entropy<T>(const Var<T>&, const Tensor<T>&);                         \
  template Var<T> soft_dice<T>(const Var<T>&, const Tensor<T>&, T);                                  \
  template Var<T> tversky<T>(const Var<T>&, const Tensor<T>&, T, T, T);                              \
  template Var<T> mean_abs_error<T>(const Var<T>&, const Tensor<T>&);

CELLSEG_INSTANTIATE_AD(float)
CELLSEG_INSTANTIATE_AD(double)

}  // namespace cellseg::ad
