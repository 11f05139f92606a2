#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dettoy/geometry.hpp"

namespace dettoy {

/// Dense cost matrix, rows = predictions, columns = ground truths.
using CostMatrix = Eigen::MatrixXd;

struct MatchResult {
  /// (prediction_index, ground_truth_index), sorted by prediction index.
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> unmatched_predictions;
  std::vector<int> unmatched_ground_truths;

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

/// A model output slot: box plus a probability distribution whose last entry is no-object.
struct Detection {
  Box box;
  std::vector<double> class_probs;

  /// Argmax over the full distribution (ties resolve to the lower index).
  int predicted_class() const;
};

struct GroundTruth {
  Box box;
  int label = 0;
};

/// Minimum-cost assignment of min(n, m) pairs. Among equal-cost optima, returns the
/// lexicographically smallest pair list. Throws InvalidArgument on an empty matrix
/// or non-finite entries.
MatchResult solve_assignment(const CostMatrix& cost);

/// Total cost of the pairs in `match`.
double assignment_cost(const CostMatrix& cost, const MatchResult& match);

/// Pairwise gIoU matrix in XYXY space. Normalized boxes are scaled by the image size.
CostMatrix giou_matrix(std::span<const Detection> predictions,
                       std::span<const GroundTruth> ground_truths, double image_width = 1.0,
                       double image_height = 1.0);

/// Evaluation matching: maximizes total gIoU (cost = -gIoU, no class term).
MatchResult match_by_giou(std::span<const Detection> predictions,
                          std::span<const GroundTruth> ground_truths, double image_width = 1.0,
                          double image_height = 1.0);

}  // namespace dettoy
