#include "dettoy/evaluation.hpp"

#include "dettoy/error.hpp"

namespace dettoy {

StatsTable evaluate_image(std::span<const Detection> detections, const DatasetImage& image,
                          int num_classes) {
  StatsTable stats(num_classes);
  const double w = image.image.width;
  const double h = image.image.height;
  if (image.ground_truths.empty()) return stats;
  const MatchResult match = match_by_giou(detections, image.ground_truths, w, h);
  accumulate_matches(match, detections, image.ground_truths, stats, w, h);
  return stats;
}

DatasetEval evaluate(const Model& model, const Dataset& dataset) {
  StatsTable total(model.config().num_classes);
  for (const auto& image : dataset.images) {
    const Prediction pred = model.predict(image.image);
    total.merge(evaluate_image(pred.detections, image, model.config().num_classes));
  }
  return summarize(total, static_cast<long>(dataset.images.size()));
}

DatasetEval run_baseline(const Model& model, const Dataset& dataset) {
  const ModelConfig& cfg = model.config();
  if (cfg.num_classes != dataset.num_classes) {
    throw ValidationError("model predicts " + std::to_string(cfg.num_classes) +
                          " classes, dataset has " + std::to_string(dataset.num_classes));
  }
  for (const auto& image : dataset.images) {
    if (image.image.width != cfg.image_size || image.image.height != cfg.image_size) {
      throw ValidationError("dataset image " + std::to_string(image.id) + " is " +
                            std::to_string(image.image.width) + "x" +
                            std::to_string(image.image.height) + ", model expects " +
                            std::to_string(cfg.image_size));
    }
  }
  return evaluate(model, dataset);
}

}  // namespace dettoy
