#include "cellseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <unordered_map>

namespace cellseg {

namespace {

MatchResult match_filtered(const InstanceLabelMap& gt, const InstanceLabelMap& pred, std::uint32_t type) {
  if (gt.height != pred.height || gt.width != pred.width) {
    throw ShapeError("label maps differ in size: " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                     " vs " + std::to_string(pred.height) + "x" + std::to_string(pred.width));
  }
  auto keep = [type](const InstanceLabelMap& m, std::uint32_t l) {
    if (l == 0) return false;
    if (type == 0) return true;
    auto it = m.types.find(l);
    return it != m.types.end() && it->second == type;
  };
  const auto ga = gt.areas(), pa = pred.areas();
  std::unordered_map<std::uint64_t, std::size_t> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto g = gt.labels[i], p = pred.labels[i];
    if (g != 0 && p != 0) ++inter[(std::uint64_t(g) << 32) | p];
  }

  MatchResult r;
  std::vector<bool> g_hit(ga.size(), false), p_hit(pa.size(), false);
  for (const auto& [key, n] : inter) {
    const auto g = static_cast<std::uint32_t>(key >> 32), p = static_cast<std::uint32_t>(key & 0xFFFFFFFFu);
    if (!keep(gt, g) || !keep(pred, p)) continue;
    const std::size_t uni = ga[g] + pa[p] - n;
    if (2 * n > uni) {
      r.pairs.push_back({g, p, static_cast<double>(n) / static_cast<double>(uni)});
      g_hit[g] = true;
      p_hit[p] = true;
    }
  }
  std::sort(r.pairs.begin(), r.pairs.end(), [](const MatchedPair& a, const MatchedPair& b) { return a.gt < b.gt; });
  for (std::uint32_t g = 1; g < ga.size(); ++g) {
    if (ga[g] > 0 && keep(gt, g) && !g_hit[g]) r.fn_ids.push_back(g);
  }
  for (std::uint32_t p = 1; p < pa.size(); ++p) {
    if (pa[p] > 0 && keep(pred, p) && !p_hit[p]) r.fp_ids.push_back(p);
  }
  return r;
}

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

}  // namespace

MatchResult match_instances(const InstanceLabelMap& gt, const InstanceLabelMap& pred) {
  return match_filtered(gt, pred, 0);
}

MatchResult match_instances_of_type(const InstanceLabelMap& gt, const InstanceLabelMap& pred, std::uint32_t type) {
  if (type == 0) throw UsageError("cell types are 1-based");
  return match_filtered(gt, pred, type);
}

ImageMetrics image_metrics(const MatchResult& m) {
  ImageMetrics out;
  const double tp = static_cast<double>(m.tp()), fp = static_cast<double>(m.fp()), fn = static_cast<double>(m.fn());
  if (m.tp() + m.fp() + m.fn() == 0) {
    out.excluded = true;
    return out;
  }
  out.p = ratio(tp, tp + fp);
  out.r = ratio(tp, tp + fn);
  out.dq = ratio(tp, tp + 0.5 * (fp + fn));
  double iou_sum = 0;
  for (const auto& pr : m.pairs) iou_sum += pr.iou;
  out.sq = ratio(iou_sum, tp);
  out.pq = out.dq * out.sq;
  return out;
}

MpqAccumulator::MpqAccumulator(std::uint32_t n_types) {
  if (n_types == 0) throw ConfigError("mPQ+ needs at least one cell type");
  stats_.resize(n_types);
}

void MpqAccumulator::add(const InstanceLabelMap& gt, const InstanceLabelMap& pred) {
  for (std::uint32_t t = 1; t <= stats_.size(); ++t) {
    const auto m = match_instances_of_type(gt, pred, t);
    auto& s = stats_[t - 1];
    s.tp += m.tp();
    s.fp += m.fp();
    s.fn += m.fn();
    s.gt_instances += m.tp() + m.fn();
    for (const auto& pr : m.pairs) s.iou_sum += pr.iou;
  }
}

std::optional<double> MpqAccumulator::class_pq(std::uint32_t t) const {
  if (t == 0 || t > stats_.size()) throw UsageError("type " + std::to_string(t) + " out of range");
  const auto& s = stats_[t - 1];
  if (s.gt_instances == 0) return std::nullopt;
  const double tp = static_cast<double>(s.tp);
  const double dq = ratio(tp, tp + 0.5 * static_cast<double>(s.fp + s.fn));
  return dq * ratio(s.iou_sum, tp);
}

double MpqAccumulator::mpq_plus() const {
  double sum = 0;
  std::size_t n = 0;
  for (std::uint32_t t = 1; t <= stats_.size(); ++t) {
    if (auto pq = class_pq(t)) {
      sum += *pq;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

MetricsSummary summarize(const std::vector<ImageRow>& rows, const MpqAccumulator& mpq) {
  MetricsSummary s;
  s.images = rows.size();
  std::size_t n = 0;
  for (const auto& row : rows) {
    if (row.m.excluded) {
      ++s.excluded;
      continue;
    }
    s.p += row.m.p;
    s.r += row.m.r;
    s.dq += row.m.dq;
    s.sq += row.m.sq;
    s.pq += row.m.pq;
    ++n;
  }
  if (n > 0) {
    const double k = static_cast<double>(n);
    s.p /= k;
    s.r /= k;
    s.dq /= k;
    s.sq /= k;
    s.pq /= k;
  }
  s.mpq_plus = mpq.mpq_plus();
  return s;
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

std::string metrics_csv(const std::vector<ImageRow>& rows) {
  std::string out = "image_id,P,R,DQ,SQ,PQ\n";
  for (const auto& row : rows) {
    if (row.m.excluded) continue;
    out += row.image_id;
    for (double v : {row.m.p, row.m.r, row.m.dq, row.m.sq, row.m.pq}) out += "," + fixed(v, 6);
    out += "\n";
  }
  return out;
}

std::string summary_csv_header() { return "name,P,R,DQ,SQ,PQ,mPQ+,images,excluded\n"; }

std::string summary_csv_row(const std::string& name, const MetricsSummary& s) {
  std::string out = name;
  for (double v : {s.p, s.r, s.dq, s.sq, s.pq, s.mpq_plus}) out += "," + fixed(100.0 * v, 2);
  out += "," + std::to_string(s.images) + "," + std::to_string(s.excluded) + "\n";
  return out;
}

std::string summary_table(const std::vector<std::pair<std::string, MetricsSummary>>& rows) {
  std::size_t width = 4;
  for (const auto& [name, s] : rows) width = std::max(width, name.size());
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s %7s %7s %7s %7s %7s %7s\n", static_cast<int>(width), "name", "P", "R", "DQ",
                "SQ", "PQ", "mPQ+");
  os << buf;
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %7.2f %7.2f %7.2f %7.2f %7.2f %7.2f\n", static_cast<int>(width),
                  name.c_str(), 100 * s.p, 100 * s.r, 100 * s.dq, 100 * s.sq, 100 * s.pq, 100 * s.mpq_plus);
    os << buf;
  }
  return os.str();
}

}  // namespace cellseg
