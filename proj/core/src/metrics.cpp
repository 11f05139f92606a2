#include "dettoy/metrics.hpp"

#include <string>

#include "dettoy/error.hpp"

namespace dettoy {

double ClassStats::f1() const {
  // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn) whenever tp > 0.
  if (tp == 0) return 0.0;
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

double ClassStats::mean_giou() const {
  return giou_count > 0 ? giou_sum / static_cast<double>(giou_count) : 0.0;
}

ClassStats& ClassStats::operator+=(const ClassStats& other) {
  instance_count += other.instance_count;
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  giou_sum += other.giou_sum;
  giou_count += other.giou_count;
  return *this;
}

StatsTable::StatsTable(int num_classes) {
  if (num_classes < 1) throw InvalidArgument("StatsTable needs at least one class");
  classes_.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) classes_[c].class_id = c;
}

ClassStats& StatsTable::at(int class_id) {
  if (class_id < 0 || class_id >= num_classes()) {
    throw InvalidArgument("class id " + std::to_string(class_id) + " outside [0, " +
                          std::to_string(num_classes()) + ")");
  }
  return classes_[class_id];
}

const ClassStats& StatsTable::at(int class_id) const {
  return const_cast<StatsTable*>(this)->at(class_id);
}

StatsTable& StatsTable::merge(const StatsTable& other) {
  if (other.num_classes() != num_classes()) {
    throw InvalidArgument("cannot merge stats tables with different class counts");
  }
  for (int c = 0; c < num_classes(); ++c) classes_[c] += other.classes_[c];
  return *this;
}

void accumulate_matches(const MatchResult& match, std::span<const Detection> predictions,
                        std::span<const GroundTruth> ground_truths, StatsTable& stats,
                        double image_width, double image_height) {
  const int no_object = stats.num_classes();
  for (const auto& gt : ground_truths) stats.at(gt.label).instance_count += 1;
  for (const auto& [pi, gi] : match.pairs) {
    const Detection& pred = predictions[pi];
    const GroundTruth& gt = ground_truths[gi];
    if (static_cast<int>(pred.class_probs.size()) != no_object + 1) {
      throw InvalidArgument("class distribution size does not match the configured class set");
    }
    const int cls = pred.predicted_class();
    ClassStats& gt_stats = stats.at(gt.label);
    if (cls == no_object) {
      gt_stats.fn += 1;
      continue;
    }
    if (cls == gt.label) {
      gt_stats.tp += 1;
    } else {
      stats.at(cls).fp += 1;
      gt_stats.fn += 1;
    }
    gt_stats.giou_sum += giou(to_xyxy(pred.box, image_width, image_height),
                              to_xyxy(gt.box, image_width, image_height));
    gt_stats.giou_count += 1;
  }
  for (int gi : match.unmatched_ground_truths) stats.at(ground_truths[gi].label).fn += 1;
}

namespace {

template <typename PerClass>
double instance_weighted(const StatsTable& stats, PerClass value) {
  long double num = 0.0L;
  long total = 0;
  for (const auto& c : stats.classes()) {
    num += static_cast<long double>(c.instance_count) * static_cast<long double>(value(c));
    total += c.instance_count;
  }
  if (total == 0) throw UndefinedMetric("no ground-truth instances");
  return static_cast<double>(num / static_cast<long double>(total));
}

}  // namespace

double weighted_f1(const StatsTable& stats) {
  return instance_weighted(stats, [](const ClassStats& c) { return c.f1(); });
}

double weighted_mgiou(const StatsTable& stats) {
  return instance_weighted(stats, [](const ClassStats& c) { return c.mean_giou(); });
}

DatasetEval summarize(const StatsTable& stats, long num_images) {
  DatasetEval eval;
  eval.mgiou = weighted_mgiou(stats);
  eval.weighted_f1 = weighted_f1(stats);
  eval.per_class.assign(stats.classes().begin(), stats.classes().end());
  eval.num_images = num_images;
  return eval;
}

}  // namespace dettoy
