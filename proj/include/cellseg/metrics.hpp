#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cellseg/label_map.hpp"

namespace cellseg {

struct MatchedPair {
  std::uint32_t gt = 0;
  std::uint32_t pred = 0;
  double iou = 0.0;

  friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

// Pairs with IoU > 0.5 (sorted by gt id) and the unmatched ids of each side.
struct MatchResult {
  std::vector<MatchedPair> pairs;
  std::vector<std::uint32_t> fp_ids;
  std::vector<std::uint32_t> fn_ids;

  std::size_t tp() const { return pairs.size(); }
  std::size_t fp() const { return fp_ids.size(); }
  std::size_t fn() const { return fn_ids.size(); }

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

MatchResult match_instances(const InstanceLabelMap& gt, const InstanceLabelMap& pred);

// Matching restricted to instances of one type on both sides.
MatchResult match_instances_of_type(const InstanceLabelMap& gt, const InstanceLabelMap& pred, std::uint32_t type);

struct ImageMetrics {
  double p = 0, r = 0, dq = 0, sq = 0, pq = 0;
  // Neither side has an instance; such images do not enter averages.
  bool excluded = false;
};

// A side with no instances gives zeros; SQ is zero without matches.
ImageMetrics image_metrics(const MatchResult& m);

// Per-class TP/FP/FN and IoU sums aggregated over a whole test set.
class MpqAccumulator {
 public:
  explicit MpqAccumulator(std::uint32_t n_types);

  void add(const InstanceLabelMap& gt, const InstanceLabelMap& pred);

  struct ClassStats {
    std::size_t tp = 0, fp = 0, fn = 0, gt_instances = 0;
    double iou_sum = 0.0;
  };
  const std::vector<ClassStats>& stats() const { return stats_; }

  // PQ+ of type t (1-based); nullopt when t never occurs in the ground truth.
  std::optional<double> class_pq(std::uint32_t t) const;
  // Mean PQ+ over types present in the ground truth; 0 when none is.
  double mpq_plus() const;

 private:
  std::vector<ClassStats> stats_;
};

struct ImageRow {
  std::string image_id;
  ImageMetrics m;
};

struct MetricsSummary {
  double p = 0, r = 0, dq = 0, sq = 0, pq = 0, mpq_plus = 0;
  std::size_t images = 0;
  std::size_t excluded = 0;
};

// Means over non-excluded rows; mPQ+ taken from the accumulator.
MetricsSummary summarize(const std::vector<ImageRow>& rows, const MpqAccumulator& mpq);

// `image_id,P,R,DQ,SQ,PQ`, one row per non-excluded image, values in [0, 1].
std::string metrics_csv(const std::vector<ImageRow>& rows);
// `name,P,R,DQ,SQ,PQ,mPQ+,images,excluded` with percentages to 2 decimals.
std::string summary_csv_header();
std::string summary_csv_row(const std::string& name, const MetricsSummary& s);
// Fixed-width table with the same columns, one line per summary.
std::string summary_table(const std::vector<std::pair<std::string, MetricsSummary>>& rows);

}  // namespace cellseg
