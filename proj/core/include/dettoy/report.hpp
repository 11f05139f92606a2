#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dettoy/experiment.hpp"

namespace dettoy {

inline constexpr const char* kSummaryHeader =
    "component,scope,block_index,ablation_pct,n_configs,baseline_mgiou,baseline_f1,"
    "mean_delta_mgiou,std_delta_mgiou,mean_delta_f1,std_delta_f1";

/// Shortest text that parses back to the same double.
std::string format_real(double v);

nlohmann::json to_json(const DatasetEval& eval);
DatasetEval dataset_eval_from_json(const nlohmann::json& doc);

/// Writes into `dir`:
///   summary.csv         one row per successful cell (kSummaryHeader)
///   configs.csv         one row per evaluated configuration
///   config_classes.csv  per-class metrics of every configuration
///   per_class.csv       per-class delta aggregates of every cell
///   failed_cells.csv    cells aborted by a failing configuration
///   sweep.json          mode and baseline evaluation
///   variance.csv        when `variance_sizes` is nonempty
///   plots/*.svg         one delta plot per component
/// Spread columns are population standard deviations over configurations. Throws
/// InvalidArgument for a result without cells and IoError when `dir` is unwritable.
void emit_report(const SweepResult& result, const std::filesystem::path& dir,
                 std::span<const int> variance_sizes = {});

/// Rebuilds a SweepResult from the raw files of emit_report, re-aggregating the cells.
SweepResult load_sweep_result(const std::filesystem::path& dir);

/// Parses summary.csv. Per-class tables are not part of the summary and come back empty.
std::vector<SweepCell> load_summary(const std::filesystem::path& path);

}  // namespace dettoy
