#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "dettoy/metrics.hpp"
#include "dettoy/model.hpp"
#include "dettoy/shapes_data.hpp"

namespace dettoy {

/// Loss term weights. Throws InvalidArgument if any is negative or all are zero.
class LossWeights {
 public:
  LossWeights() : LossWeights(1.0, 5.0, 2.0) {}
  LossWeights(double cls, double l1, double giou);

  double cls() const { return cls_; }
  double l1() const { return l1_; }
  double giou() const { return giou_; }

 private:
  double cls_, l1_, giou_;
};

/// Ground truth of one image in training form: labels and normalized (cx, cy, w, h) boxes.
struct Target {
  std::vector<int> labels;
  ad::Matrix boxes;  ///< n x 4
};

Target make_target(const DatasetImage& image);

/// -w_cls * p(gt class) + w_l1 * |b - b_gt|_1 + w_giou * (1 - gIoU); boxes normalized cxcywh.
double matching_cost(const Detection& pred, const GroundTruth& gt, const LossWeights& weights);

/// Cost matrix of every query against every target from raw head outputs.
CostMatrix training_cost_matrix(const ad::Matrix& logits, const ad::Matrix& boxes,
                                const Target& target, const LossWeights& weights);

struct LossBreakdown {
  ad::Var total;      ///< 1x1, summed over blocks
  double cls = 0.0;   ///< unweighted terms, summed over blocks
  double l1 = 0.0;
  double giou = 0.0;
  std::vector<MatchResult> matches;  ///< one per supervised head, in order
};

/// Set-prediction loss of one head: weighted CE (unmatched slots target no-object with
/// weight `no_object_weight`) plus L1 and gIoU terms over matched pairs, box terms
/// normalized by max(1, number of targets).
LossBreakdown head_loss(const HeadOutput& head, const Target& target, const LossWeights& weights,
                        double no_object_weight = 0.1);

/// Sum of head_loss over every decoder block and, where present, the encoder proposals.
LossBreakdown compute_loss(const ModelOutput& output, const Target& target,
                           const LossWeights& weights, double no_object_weight = 0.1);

struct TrainSettings {
  int epochs = 30;
  int batch_size = 1;
  double learning_rate = 2e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.1;  ///< global L2 norm; 0 disables
  double no_object_weight = 0.1;
  LossWeights loss;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainSettings& s);
/// Missing keys keep defaults; unknown keys are rejected.
TrainSettings train_settings_from_json(const nlohmann::json& doc);

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  long steps = 0;
  double loss = 0.0;
  double loss_cls = 0.0;
  double loss_l1 = 0.0;
  double loss_giou = 0.0;
  std::optional<double> val_mgiou;
  std::optional<double> val_f1;
};

nlohmann::json to_json(const EpochRecord& r);

using EpochCallback = std::function<void(const EpochRecord&, const Model&)>;

/// Trains in place with AdamW. Images are visited in a per-epoch shuffled order derived from
/// settings.seed; the run is deterministic. Content queries stay zero when the config
/// freezes them. Throws DivergenceError naming the step on a non-finite loss and
/// ContractViolation if the model is locked by an ablation.
std::vector<EpochRecord> train(Model& model, const Dataset& train_set,
                               const Dataset* validation, const TrainSettings& settings,
                               const EpochCallback& on_epoch = {});

}  // namespace dettoy
