#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dettoy/ablation.hpp"
#include "dettoy/metrics.hpp"
#include "dettoy/model.hpp"
#include "dettoy/shapes_data.hpp"

namespace dettoy {

enum class SweepMode { Full, Blockwise };
std::string to_string(SweepMode m);
SweepMode sweep_mode_from_string(const std::string& name);

struct SweepConfig {
  std::vector<Component> components{Component::EncoderMhsa, Component::DecoderMhsa,
                                    Component::DecoderMhca, Component::QueryEmbeddings};
  std::vector<double> percentages{0.05, 0.15, 0.30, 0.50};
  double blockwise_percentage = 0.30;
  int n_configs = 100;
  std::uint64_t master_seed = 0;
  std::string dataset;     ///< directory written by datagen
  std::string checkpoint;  ///< model checkpoint file
  int threads = 1;         ///< 1: apply/restore on one working copy; >1: per-config snapshots
  std::vector<int> variance_sizes{10, 25, 50, 100};

  /// Throws ValidationError. A percentage of 0 is accepted as an identity control.
  void validate() const;
};

nlohmann::json to_json(const SweepConfig& cfg);
/// Missing keys keep defaults; unknown keys are rejected.
SweepConfig sweep_config_from_json(const nlohmann::json& doc);

/// Seed of one configuration; depends only on the master seed, component, level or block,
/// and configuration index.
std::uint64_t config_seed(std::uint64_t master_seed, Component component, SweepMode mode,
                          double percentage, std::optional<int> block, int config_index);

/// Per-class metrics of one evaluation.
struct ClassMetrics {
  int class_id = 0;
  long instance_count = 0;
  double f1 = 0.0;
  double mgiou = 0.0;  ///< mean gIoU over valid matches, 0 without any
};

std::vector<ClassMetrics> class_metrics(const DatasetEval& eval);

/// One evaluated ablation configuration. Deltas are ablated minus baseline, in
/// percentage points.
struct ConfigRow {
  Component component = Component::EncoderMhsa;
  std::optional<int> block;
  double percentage = 0.0;
  int config_index = 0;
  std::uint64_t seed = 0;
  std::size_t subunits = 0;
  double mgiou = 0.0;
  double f1 = 0.0;
  double delta_mgiou = 0.0;
  double delta_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
};

struct ClassDelta {
  int class_id = 0;
  long instance_count = 0;
  double baseline_f1 = 0.0;
  double baseline_mgiou = 0.0;
  double mean_delta_f1 = 0.0;
  double std_delta_f1 = 0.0;
  double mean_delta_mgiou = 0.0;
  double std_delta_mgiou = 0.0;
};

/// Aggregate over the configurations of one (component, level-or-block). Spreads are
/// population standard deviations over configurations.
struct SweepCell {
  Component component = Component::EncoderMhsa;
  std::optional<int> block;
  double percentage = 0.0;
  int n_configs = 0;
  double baseline_mgiou = 0.0;
  double baseline_f1 = 0.0;
  double mean_delta_mgiou = 0.0;
  double std_delta_mgiou = 0.0;
  double mean_delta_f1 = 0.0;
  double std_delta_f1 = 0.0;
  std::vector<ClassDelta> per_class;
  std::optional<std::string> error;  ///< set when a configuration failed; aggregates are void
};

struct SweepResult {
  SweepMode mode = SweepMode::Full;
  DatasetEval baseline;
  std::vector<SweepCell> cells;
  std::vector<ConfigRow> rows;  ///< ordered by cell, then configuration index
};

/// Every component at every percentage over all blocks.
SweepResult run_full_sweep(const Model& model, const Dataset& dataset, const SweepConfig& cfg);
/// Each block-stack component one block at a time at cfg.blockwise_percentage.
/// Components without blocks are skipped.
SweepResult run_blockwise_sweep(const Model& model, const Dataset& dataset,
                                const SweepConfig& cfg);
/// Loads cfg.checkpoint and cfg.dataset, then runs the requested sweep.
SweepResult run_sweep(const SweepConfig& cfg, SweepMode mode);

/// Recomputes cell aggregates from rows (rows must be ordered by cell).
std::vector<SweepCell> aggregate(const std::vector<ConfigRow>& rows, const DatasetEval& baseline);

struct VariancePoint {
  Component component = Component::EncoderMhsa;
  std::optional<int> block;
  double percentage = 0.0;
  int sample_size = 0;
  double std_mgiou = 0.0;
  double std_f1 = 0.0;
};

/// Spread of the ablated metrics over the first n configurations of each cell, for each n.
/// Throws InvalidArgument if some n exceeds a cell's configuration count or is < 1.
std::vector<VariancePoint> variance_curve(const SweepResult& result, std::span<const int> sizes);

/// Population standard deviation; 0 for fewer than two values.
double population_std(std::span<const double> values);

}  // namespace dettoy
