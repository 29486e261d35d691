#include "cellseg/targets.hpp"

#include <cmath>
#include <limits>

namespace cellseg {

std::vector<std::uint32_t> argmax_channels(const Tensor4& t) {
  const auto& s = t.shape();
  if (s.n != 1) throw ShapeError("argmax_channels expects batch 1, got " + s.str());
  std::vector<std::uint32_t> out(s.plane(), 0);
  for (std::size_t i = 0; i < s.plane(); ++i) {
    float best = t.plane(0, 0)[i];
    for (std::uint32_t c = 1; c < s.c; ++c) {
      const float v = t.plane(0, c)[i];
      if (v > best) {
        best = v;
        out[i] = c;
      }
    }
  }
  return out;
}

namespace {

struct Seed {
  double cy = 0, cx = 0;
};

}  // namespace

InstanceLabelMap postprocess(const Tensor4& sm1_probs, const Tensor4& sm2_probs, const Tensor4& dm,
                             const PostprocParams& params) {
  const auto& s = sm1_probs.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("sm1 must be (1,3,H,W), got " + s.str());
  if (sm2_probs.shape().n != 1 || sm2_probs.shape().c < 2 || sm2_probs.shape().h != s.h ||
      sm2_probs.shape().w != s.w) {
    throw ShapeError("sm2 must be (1,T+1,H,W) matching sm1, got " + sm2_probs.shape().str());
  }
  if (dm.shape() != Shape{1, 4, s.h, s.w}) throw ShapeError("dm must be (1,4,H,W), got " + dm.shape().str());

  const std::size_t h = s.h, w = s.w, np = h * w;
  const auto cls = argmax_channels(sm1_probs);
  std::vector<std::uint32_t> lab(np, 0);

  // Seeds: 4-connected body components, flood-filled in raster order.
  std::vector<Seed> seeds;
  {
    std::vector<std::uint32_t> comp(np, 0);
    std::vector<std::size_t> stack, members;
    std::uint32_t next = 0;
    for (std::size_t i = 0; i < np; ++i) {
      if (cls[i] != kBody || comp[i] != 0) continue;
      ++next;
      members.clear();
      stack.assign(1, i);
      comp[i] = next;
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        members.push_back(p);
        const std::size_t y = p / w, x = p % w;
        auto visit = [&](std::size_t q) {
          if (cls[q] == kBody && comp[q] == 0) {
            comp[q] = next;
            stack.push_back(q);
          }
        };
        if (x > 0) visit(p - 1);
        if (x + 1 < w) visit(p + 1);
        if (y > 0) visit(p - w);
        if (y + 1 < h) visit(p + w);
      }
      if (members.size() < params.min_seed_area) continue;
      Seed sd;
      for (std::size_t p : members) {
        sd.cy += static_cast<double>(p / w);
        sd.cx += static_cast<double>(p % w);
      }
      sd.cy /= static_cast<double>(members.size());
      sd.cx /= static_cast<double>(members.size());
      seeds.push_back(sd);
      const auto id = static_cast<std::uint32_t>(seeds.size());
      for (std::size_t p : members) lab[p] = id;
    }
  }

  // Centre voting for the remaining foreground.
  const double half = params.dmax / 2.0;
  const double r2 = params.r_max * params.r_max;
  for (std::size_t i = 0; i < np; ++i) {
    if (cls[i] == kBackground || lab[i] != 0) continue;
    const double qx = static_cast<double>(i % w) + (double(dm.plane(0, 1)[i]) - double(dm.plane(0, 0)[i])) * half;
    const double qy = static_cast<double>(i / w) + (double(dm.plane(0, 3)[i]) - double(dm.plane(0, 2)[i])) * half;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t pick = 0;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const double d2 = (seeds[k].cx - qx) * (seeds[k].cx - qx) + (seeds[k].cy - qy) * (seeds[k].cy - qy);
      if (d2 <= r2 && d2 < best) {
        best = d2;
        pick = static_cast<std::uint32_t>(k + 1);
      }
    }
    lab[i] = pick;
  }

  // Neighbour majority for pixels no seed claimed.
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < np; ++i) {
    if (cls[i] != kBackground && lab[i] == 0) pending.push_back(i);
  }
  std::vector<std::pair<std::size_t, std::uint32_t>> updates;
  while (!pending.empty()) {
    updates.clear();
    for (std::size_t p : pending) {
      const std::size_t y = p / w, x = p % w;
      std::uint32_t nl[8];
      int nn = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
          if ((dy == 0 && dx == 0) || yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(h) ||
              xx >= static_cast<std::ptrdiff_t>(w)) {
            continue;
          }
          const auto l = lab[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
          if (l != 0) nl[nn++] = l;
        }
      }
      if (nn == 0) continue;
      std::sort(nl, nl + nn);
      std::uint32_t best = 0;
      int best_count = 0;
      for (int a = 0; a < nn;) {
        int b = a;
        while (b < nn && nl[b] == nl[a]) ++b;
        if (b - a > best_count) {
          best_count = b - a;
          best = nl[a];
        }
        a = b;
      }
      updates.emplace_back(p, best);
    }
    if (updates.empty()) break;
    for (auto [p, l] : updates) lab[p] = l;
    std::erase_if(pending, [&](std::size_t p) { return lab[p] != 0; });
  }

  InstanceLabelMap raw(h, w);
  raw.labels = std::move(lab);
  InstanceLabelMap out = renumber_raster(raw);

  // Types from sm2.
  const std::uint32_t n_cls = static_cast<std::uint32_t>(sm2_probs.shape().c);
  const std::uint32_t k = out.max_label();
  std::vector<std::vector<std::size_t>> votes(k + 1, std::vector<std::size_t>(n_cls, 0));
  std::vector<std::vector<double>> mass(k + 1, std::vector<double>(n_cls, 0.0));
  for (std::size_t i = 0; i < np; ++i) {
    const auto l = out.labels[i];
    if (l == 0) continue;
    std::uint32_t arg = 1;
    float best = sm2_probs.plane(0, 1)[i];
    for (std::uint32_t c = 1; c < n_cls; ++c) {
      const float v = sm2_probs.plane(0, c)[i];
      mass[l][c] += v;
      if (v > best) {
        best = v;
        arg = c;
      }
    }
    ++votes[l][arg];
  }
  for (std::uint32_t l = 1; l <= k; ++l) {
    std::uint32_t pick = 1;
    for (std::uint32_t c = 2; c < n_cls; ++c) {
      if (votes[l][c] > votes[l][pick] || (votes[l][c] == votes[l][pick] && mass[l][c] > mass[l][pick])) pick = c;
    }
    out.types[l] = pick;
  }
  return out;
}

}  // namespace cellseg
