#include "dettoy/experiment.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "dettoy/checkpoint.hpp"
#include "dettoy/error.hpp"
#include "dettoy/evaluation.hpp"
#include "dettoy/random.hpp"

namespace dettoy {

std::string to_string(SweepMode m) { return m == SweepMode::Full ? "full" : "blockwise"; }

SweepMode sweep_mode_from_string(const std::string& name) {
  if (name == "full") return SweepMode::Full;
  if (name == "blockwise") return SweepMode::Blockwise;
  throw InvalidArgument("unknown sweep mode '" + name + "' (expected full or blockwise)");
}

void SweepConfig::validate() const {
  if (components.empty()) throw ValidationError("sweep needs at least one component");
  if (percentages.empty()) throw ValidationError("sweep needs at least one percentage");
  for (double p : percentages) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("percentages must lie in [0, 1]");
  }
  if (!(blockwise_percentage >= 0.0 && blockwise_percentage <= 1.0)) {
    throw ValidationError("blockwise_percentage must lie in [0, 1]");
  }
  if (n_configs < 1) throw ValidationError("n_configs must be >= 1");
  if (threads < 1) throw ValidationError("threads must be >= 1");
  for (int n : variance_sizes) {
    if (n < 1) throw ValidationError("variance sizes must be >= 1");
  }
}

nlohmann::json to_json(const SweepConfig& cfg) {
  nlohmann::json comps = nlohmann::json::array();
  for (Component c : cfg.components) comps.push_back(to_string(c));
  return {{"components", comps},
          {"percentages", cfg.percentages},
          {"blockwise_percentage", cfg.blockwise_percentage},
          {"n_configs", cfg.n_configs},
          {"master_seed", cfg.master_seed},
          {"dataset", cfg.dataset},
          {"checkpoint", cfg.checkpoint},
          {"threads", cfg.threads},
          {"variance_sizes", cfg.variance_sizes}};
}

SweepConfig sweep_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("sweep config must be an object");
  SweepConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "components") {
        cfg.components.clear();
        for (const auto& c : value) cfg.components.push_back(component_from_string(c.get<std::string>()));
      } else if (key == "percentages") {
        cfg.percentages = value.get<std::vector<double>>();
      } else if (key == "blockwise_percentage") {
        cfg.blockwise_percentage = value.get<double>();
      } else if (key == "n_configs") {
        cfg.n_configs = value.get<int>();
      } else if (key == "master_seed") {
        cfg.master_seed = value.get<std::uint64_t>();
      } else if (key == "dataset") {
        cfg.dataset = value.get<std::string>();
      } else if (key == "checkpoint") {
        cfg.checkpoint = value.get<std::string>();
      } else if (key == "threads") {
        cfg.threads = value.get<int>();
      } else if (key == "variance_sizes") {
        cfg.variance_sizes = value.get<std::vector<int>>();
      } else {
        throw ValidationError("unknown sweep setting '" + key + "'");
      }
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("sweep setting '" + key + "' has the wrong type");
    } catch (const InvalidArgument& e) {
      throw ValidationError(e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::uint64_t config_seed(std::uint64_t master_seed, Component component, SweepMode mode,
                          double percentage, std::optional<int> block, int config_index) {
  std::uint64_t s = derive_seed(master_seed, stable_hash(to_string(component)));
  s = derive_seed(s, stable_hash(to_string(mode)));
  s = derive_seed(s, static_cast<std::uint64_t>(std::llround(percentage * 1e6)));
  s = derive_seed(s, block ? static_cast<std::uint64_t>(*block) + 1 : 0);
  return derive_seed(s, static_cast<std::uint64_t>(config_index));
}

std::vector<ClassMetrics> class_metrics(const DatasetEval& eval) {
  std::vector<ClassMetrics> out;
  for (const auto& c : eval.per_class) {
    out.push_back({c.class_id, c.instance_count, c.f1(), c.mean_giou()});
  }
  return out;
}

double population_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  long double mean = 0.0L;
  for (double v : values) mean += v;
  mean /= static_cast<long double>(values.size());
  long double ss = 0.0L;
  for (double v : values) ss += (v - mean) * (v - mean);
  return static_cast<double>(std::sqrt(ss / static_cast<long double>(values.size())));
}

namespace {

double mean_of(std::span<const double> values) {
  long double s = 0.0L;
  for (double v : values) s += v;
  return static_cast<double>(s / static_cast<long double>(values.size()));
}

bool same_cell(const ConfigRow& a, const ConfigRow& b) {
  return a.component == b.component && a.block == b.block && a.percentage == b.percentage;
}

struct CellKey {
  Component component;
  std::optional<int> block;
  double percentage;
};

struct Job {
  std::size_t cell;
  int config_index;
};

ConfigRow evaluate_config(const Model& base, Model* work, const Dataset& dataset,
                          const SweepConfig& cfg, SweepMode mode, const CellKey& key, int c,
                          const DatasetEval& baseline) {
  ConfigRow row;
  row.component = key.component;
  row.block = key.block;
  row.percentage = key.percentage;
  row.config_index = c;
  row.seed = config_seed(cfg.master_seed, key.component, mode, key.percentage, key.block, c);
  const AblationSpec spec = AblationSpec::make(key.component, key.percentage, key.block, row.seed);
  DatasetEval eval;
  if (work) {
    // Serial mode: reversible ablation of one working copy.
    AblationHandle handle = apply(*work, sample_mask(*work, spec));
    row.subunits = handle.mask().subunit_count();
    eval = evaluate(*work, dataset);
    handle.restore();
  } else {
    Model snapshot(base);
    const AblationMask mask = sample_mask(snapshot, spec);
    zero_cells(snapshot.parameters(), mask);
    row.subunits = mask.subunit_count();
    eval = evaluate(snapshot, dataset);
  }
  row.mgiou = eval.mgiou;
  row.f1 = eval.weighted_f1;
  row.delta_mgiou = 100.0 * (eval.mgiou - baseline.mgiou);
  row.delta_f1 = 100.0 * (eval.weighted_f1 - baseline.weighted_f1);
  row.per_class = class_metrics(eval);
  return row;
}

SweepResult run_cells(const Model& model, const Dataset& dataset, const SweepConfig& cfg,
                      SweepMode mode, const std::vector<CellKey>& keys) {
  cfg.validate();
  for (const auto& key : keys) {
    AblationSpec::make(key.component, key.percentage, key.block, 0).validate(model.config());
  }
  SweepResult result;
  result.mode = mode;
  result.baseline = run_baseline(model, dataset);

  std::vector<Job> jobs;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    for (int c = 0; c < cfg.n_configs; ++c) jobs.push_back({k, c});
  }
  std::vector<std::optional<ConfigRow>> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());

  auto run_job = [&](std::size_t j, Model* work) {
    try {
      rows[j] = evaluate_config(model, work, dataset, cfg, mode, keys[jobs[j].cell],
                                jobs[j].config_index, result.baseline);
    } catch (const std::exception& e) {
      errors[j] = "config " + std::to_string(jobs[j].config_index) + ": " + e.what();
    }
  };

  if (cfg.threads == 1) {
    Model work(model);
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j, &work);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const int n = std::min<int>(cfg.threads, static_cast<int>(jobs.size()));
    for (int t = 0; t < n; ++t) {
      pool.emplace_back([&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) run_job(j, nullptr);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::vector<std::optional<std::string>> cell_error(keys.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    auto& err = cell_error[jobs[j].cell];
    if (!errors[j].empty() && !err) err = errors[j];
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (!cell_error[jobs[j].cell]) result.rows.push_back(std::move(*rows[j]));
  }
  std::vector<SweepCell> ok = aggregate(result.rows, result.baseline);
  std::size_t next_ok = 0;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    if (cell_error[k]) {
      SweepCell cell;
      cell.component = keys[k].component;
      cell.block = keys[k].block;
      cell.percentage = keys[k].percentage;
      cell.baseline_mgiou = result.baseline.mgiou;
      cell.baseline_f1 = result.baseline.weighted_f1;
      cell.error = cell_error[k];
      result.cells.push_back(std::move(cell));
    } else {
      result.cells.push_back(std::move(ok[next_ok++]));
    }
  }
  return result;
}

}  // namespace

std::vector<SweepCell> aggregate(const std::vector<ConfigRow>& rows, const DatasetEval& baseline) {
  std::vector<SweepCell> cells;
  const std::vector<ClassMetrics> base_classes = class_metrics(baseline);
  std::size_t begin = 0;
  while (begin < rows.size()) {
    std::size_t end = begin + 1;
    while (end < rows.size() && same_cell(rows[begin], rows[end])) ++end;
    const std::size_t n = end - begin;

    SweepCell cell;
    cell.component = rows[begin].component;
    cell.block = rows[begin].block;
    cell.percentage = rows[begin].percentage;
    cell.n_configs = static_cast<int>(n);
    cell.baseline_mgiou = baseline.mgiou;
    cell.baseline_f1 = baseline.weighted_f1;
    std::vector<double> dm, df;
    for (std::size_t i = begin; i < end; ++i) {
      dm.push_back(rows[i].delta_mgiou);
      df.push_back(rows[i].delta_f1);
    }
    cell.mean_delta_mgiou = mean_of(dm);
    cell.std_delta_mgiou = population_std(dm);
    cell.mean_delta_f1 = mean_of(df);
    cell.std_delta_f1 = population_std(df);

    for (std::size_t k = 0; k < base_classes.size(); ++k) {
      const ClassMetrics& b = base_classes[k];
      std::vector<double> cf, cg;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& pc = rows[i].per_class;
        if (pc.size() != base_classes.size()) {
          throw ValidationError("per-class rows disagree with the baseline class count");
        }
        cf.push_back(100.0 * (pc[k].f1 - b.f1));
        cg.push_back(100.0 * (pc[k].mgiou - b.mgiou));
      }
      cell.per_class.push_back({b.class_id, b.instance_count, b.f1, b.mgiou, mean_of(cf),
                                population_std(cf), mean_of(cg), population_std(cg)});
    }
    cells.push_back(std::move(cell));
    begin = end;
  }
  return cells;
}

SweepResult run_full_sweep(const Model& model, const Dataset& dataset, const SweepConfig& cfg) {
  std::vector<CellKey> keys;
  for (Component c : cfg.components) {
    for (double p : cfg.percentages) keys.push_back({c, std::nullopt, p});
  }
  return run_cells(model, dataset, cfg, SweepMode::Full, keys);
}

SweepResult run_blockwise_sweep(const Model& model, const Dataset& dataset,
                                const SweepConfig& cfg) {
  std::vector<CellKey> keys;
  for (Component c : cfg.components) {
    if (!is_blockwise(c)) continue;
    const int n = c == Component::EncoderMhsa ? model.config().encoder_blocks
                                              : model.config().decoder_blocks;
    for (int b = 0; b < n; ++b) keys.push_back({c, b, cfg.blockwise_percentage});
  }
  if (keys.empty()) throw ValidationError("blockwise sweep needs an attention component");
  return run_cells(model, dataset, cfg, SweepMode::Blockwise, keys);
}

SweepResult run_sweep(const SweepConfig& cfg, SweepMode mode) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw ValidationError("sweep config lacks a checkpoint path");
  if (cfg.dataset.empty()) throw ValidationError("sweep config lacks a dataset path");
  const Model model = load_checkpoint(cfg.checkpoint);
  const Dataset dataset = load_dataset(cfg.dataset);
  return mode == SweepMode::Full ? run_full_sweep(model, dataset, cfg)
                                 : run_blockwise_sweep(model, dataset, cfg);
}

std::vector<VariancePoint> variance_curve(const SweepResult& result, std::span<const int> sizes) {
  std::vector<VariancePoint> out;
  std::size_t begin = 0;
  while (begin < result.rows.size()) {
    std::size_t end = begin + 1;
    while (end < result.rows.size() && same_cell(result.rows[begin], result.rows[end])) ++end;
    for (int n : sizes) {
      if (n < 1 || static_cast<std::size_t>(n) > end - begin) {
        throw InvalidArgument("variance sample size " + std::to_string(n) +
                              " outside 1.." + std::to_string(end - begin));
      }
      std::vector<double> dm, df;
      for (std::size_t i = begin; i < begin + static_cast<std::size_t>(n); ++i) {
        dm.push_back(result.rows[i].delta_mgiou);
        df.push_back(result.rows[i].delta_f1);
      }
      const ConfigRow& r = result.rows[begin];
      out.push_back({r.component, r.block, r.percentage, n, population_std(dm),
                     population_std(df)});
    }
    begin = end;
  }
  return out;
}

}  // namespace dettoy
