#pragma once

#include <span>
#include <vector>

#include "dettoy/matching.hpp"

namespace dettoy {

/// Per-class accumulator for F1 and mean gIoU.
struct ClassStats {
  int class_id = 0;
  long instance_count = 0;  ///< ground-truth instances seen
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double giou_sum = 0.0;
  long giou_count = 0;  ///< matched valid pairs whose ground truth has this class

  double f1() const;
  /// Mean gIoU over valid matched pairs; 0 when there are none.
  double mean_giou() const;

  ClassStats& operator+=(const ClassStats& other);
  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

/// Indexed by class id in [0, num_classes). The no-object slot is num_classes.
class StatsTable {
 public:
  explicit StatsTable(int num_classes);

  int num_classes() const { return static_cast<int>(classes_.size()); }
  ClassStats& at(int class_id);
  const ClassStats& at(int class_id) const;
  std::span<const ClassStats> classes() const { return classes_; }

  /// Field-wise addition; associative and commutative.
  StatsTable& merge(const StatsTable& other);
  friend bool operator==(const StatsTable&, const StatsTable&) = default;

 private:
  std::vector<ClassStats> classes_;
};

struct DatasetEval {
  double mgiou = 0.0;
  double weighted_f1 = 0.0;
  std::vector<ClassStats> per_class;
  long num_images = 0;

  friend bool operator==(const DatasetEval&, const DatasetEval&) = default;
};

/// Folds one image's match into `stats`. Matched pairs whose prediction argmax is the
/// no-object slot are invalid detections: their ground truth counts as a false negative
/// and nothing else is recorded. Unmatched predictions are ignored.
void accumulate_matches(const MatchResult& match, std::span<const Detection> predictions,
                        std::span<const GroundTruth> ground_truths, StatsTable& stats,
                        double image_width = 1.0, double image_height = 1.0);

/// Instance-weighted mean of per-class F1. Throws UndefinedMetric without ground truths.
double weighted_f1(const StatsTable& stats);

/// Instance-weighted mean of per-class mean gIoU; classes without valid matches count as 0.
double weighted_mgiou(const StatsTable& stats);

/// Builds the dataset summary from accumulated stats.
DatasetEval summarize(const StatsTable& stats, long num_images);

}  // namespace dettoy
