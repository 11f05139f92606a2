#pragma once

#include "dettoy/metrics.hpp"
#include "dettoy/model.hpp"
#include "dettoy/shapes_data.hpp"

namespace dettoy {

/// Matches one image's detections to its ground truths by gIoU and returns its stats.
StatsTable evaluate_image(std::span<const Detection> detections, const DatasetImage& image,
                          int num_classes);

/// Full-dataset evaluation of the final decoder block. Per-image stats are merged in
/// dataset order, so the result is bit-reproducible.
DatasetEval evaluate(const Model& model, const Dataset& dataset);

/// Baseline evaluation. Throws ValidationError when the model's image size or class
/// count disagrees with the dataset.
DatasetEval run_baseline(const Model& model, const Dataset& dataset);

}  // namespace dettoy
