#include "dettoy/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dettoy/error.hpp"

namespace dettoy {

namespace {

struct Solution {
  std::vector<int> row_to_col;  // -1 when unmatched
  double total = 0.0;
  // Dual potentials: u(i) + v(j) <= c(i, j) with equality on assigned pairs.
  std::vector<double> u;
  std::vector<double> v;
};

// Shortest augmenting path Hungarian method for rows <= cols.
Solution hungarian_wide(const CostMatrix& c) {
  const int n = static_cast<int>(c.rows());
  const int m = static_cast<int>(c.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.row_to_col.assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) s.row_to_col[p[j] - 1] = j - 1;
  }
  for (int i = 0; i < n; ++i) s.total += c(i, s.row_to_col[i]);
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

// Optimal assignment for any orientation, reported as prediction -> ground truth.
// Duals are stored as row/column potentials of the original orientation.
Solution solve_any(const CostMatrix& c) {
  if (c.rows() <= c.cols()) return hungarian_wide(c);
  const CostMatrix t = c.transpose();
  Solution st = hungarian_wide(t);
  Solution s;
  s.row_to_col.assign(c.rows(), -1);
  for (int j = 0; j < static_cast<int>(t.rows()); ++j) s.row_to_col[st.row_to_col[j]] = j;
  s.total = st.total;
  s.u = std::move(st.v);
  s.v = std::move(st.u);
  return s;
}

bool same_cost(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

// Minimum cost with the given rows/columns removed; -inf sentinel never returned.
// Returns the solution mapped back to original indices.
Solution solve_restricted(const CostMatrix& c, const std::vector<int>& rows,
                          const std::vector<int>& cols) {
  CostMatrix sub(rows.size(), cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = 0; b < cols.size(); ++b) sub(a, b) = c(rows[a], cols[b]);
  }
  Solution local = solve_any(sub);
  Solution out;
  out.row_to_col.assign(c.rows(), -1);
  for (std::size_t a = 0; a < rows.size(); ++a) {
    if (local.row_to_col[a] >= 0) out.row_to_col[rows[a]] = cols[local.row_to_col[a]];
  }
  out.total = local.total;
  return out;
}

}  // namespace

int Detection::predicted_class() const {
  if (class_probs.empty()) throw InvalidArgument("detection has an empty class distribution");
  return static_cast<int>(std::max_element(class_probs.begin(), class_probs.end()) -
                          class_probs.begin());
}

MatchResult solve_assignment(const CostMatrix& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n < 1 || m < 1) throw InvalidArgument("cost matrix must have at least one row and column");
  if (!cost.allFinite()) throw InvalidArgument("cost matrix contains non-finite entries");

  Solution best = solve_any(cost);
  const double optimum = best.total;
  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());

  // Lexicographic refinement. Any optimal assignment only uses edges that are tight
  // under the optimal duals, so only tight edges preceding the current choice need a
  // constrained re-solve.
  std::vector<int> current = best.row_to_col;
  std::vector<char> col_taken(m, 0);
  std::vector<char> row_done(n, 0);
  double fixed_cost = 0.0;
  int remaining = std::min(n, m);
  for (int i = 0; i < n && remaining > 0; ++i) {
    const int incumbent = current[i];
    bool accepted = false;
    const int limit = incumbent >= 0 ? incumbent : m;
    for (int j = 0; j < limit; ++j) {
      if (col_taken[j]) continue;
      const double reduced = cost(i, j) - best.u[i] - best.v[j];
      if (reduced > 1e-9 * scale) continue;
      // Force (i, j): solve on the rows after i and the free columns.
      std::vector<int> rows, cols;
      for (int r = i + 1; r < n; ++r) rows.push_back(r);
      for (int col = 0; col < m; ++col) {
        if (!col_taken[col] && col != j) cols.push_back(col);
      }
      const int need = remaining - 1;
      if (static_cast<int>(std::min(rows.size(), cols.size())) < need) continue;
      double total = fixed_cost + cost(i, j);
      Solution sub;
      if (need > 0) {
        sub = solve_restricted(cost, rows, cols);
        total += sub.total;
      } else {
        sub.row_to_col.assign(n, -1);
      }
      if (!same_cost(total, optimum)) continue;
      for (int r = i + 1; r < n; ++r) current[r] = sub.row_to_col[r];
      current[i] = j;
      accepted = true;
      break;
    }
    if (!accepted && incumbent >= 0) accepted = true;
    if (accepted) {
      col_taken[current[i]] = 1;
      fixed_cost += cost(i, current[i]);
      --remaining;
    } else {
      current[i] = -1;
    }
    row_done[i] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (!row_done[i]) current[i] = -1;
  }

  MatchResult result;
  std::vector<char> gt_used(m, 0);
  for (int i = 0; i < n; ++i) {
    if (current[i] >= 0) {
      result.pairs.emplace_back(i, current[i]);
      gt_used[current[i]] = 1;
    } else {
      result.unmatched_predictions.push_back(i);
    }
  }
  for (int j = 0; j < m; ++j) {
    if (!gt_used[j]) result.unmatched_ground_truths.push_back(j);
  }
  return result;
}

double assignment_cost(const CostMatrix& cost, const MatchResult& match) {
  double total = 0.0;
  for (const auto& [i, j] : match.pairs) total += cost(i, j);
  return total;
}

CostMatrix giou_matrix(std::span<const Detection> predictions,
                       std::span<const GroundTruth> ground_truths, double image_width,
                       double image_height) {
  CostMatrix g(predictions.size(), ground_truths.size());
  std::vector<Box> gt_boxes;
  gt_boxes.reserve(ground_truths.size());
  for (const auto& gt : ground_truths) {
    gt_boxes.push_back(to_xyxy(gt.box, image_width, image_height));
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Box p = to_xyxy(predictions[i].box, image_width, image_height);
    for (std::size_t j = 0; j < gt_boxes.size(); ++j) g(i, j) = giou(p, gt_boxes[j]);
  }
  return g;
}

MatchResult match_by_giou(std::span<const Detection> predictions,
                          std::span<const GroundTruth> ground_truths, double image_width,
                          double image_height) {
  if (predictions.empty() || ground_truths.empty()) {
    throw InvalidArgument("match_by_giou needs at least one prediction and one ground truth");
  }
  return solve_assignment(-giou_matrix(predictions, ground_truths, image_width, image_height));
}

}  // namespace dettoy
