// dettoy: data generation, training, evaluation and ablation sweeps for toy detection
// transformers. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "dettoy/ablation.hpp"
#include "dettoy/checkpoint.hpp"
#include "dettoy/error.hpp"
#include "dettoy/evaluation.hpp"
#include "dettoy/experiment.hpp"
#include "dettoy/report.hpp"
#include "dettoy/training.hpp"

namespace {

using namespace dettoy;
using nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << doc.dump(2) << '\n';
}

void print_eval(const char* label, const DatasetEval& e) {
  std::printf("%s mgIoU %.4f  weighted F1 %.4f  (%ld images)\n", label, e.mgiou, e.weighted_f1,
              e.num_images);
  for (const auto& c : e.per_class) {
    std::printf("  class %d  instances %ld  F1 %.4f  mean gIoU %.4f\n", c.class_id,
                c.instance_count, c.f1(), c.mean_giou());
  }
}

struct DatagenArgs {
  int n_images = 500;
  int image_size = 64;
  std::uint64_t seed = 0;
  std::string out;
};

int run_datagen(const DatagenArgs& a) {
  if (a.n_images < 1) throw InvalidArgument("--n-images must be >= 1");
  const AnnotationFile ann = generate_dataset(a.n_images, a.image_size, a.seed, a.out);
  std::printf("wrote %zu images, %zu annotations to %s\n", ann.images.size(),
              ann.annotations.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string variant;
  std::string dataset;
  std::string val_dataset;
  std::string out;
  std::string log;
  int epochs = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool freeze = false;
};

int run_train(const TrainArgs& a) {
  json doc = a.config.empty() ? json::object() : read_json(a.config);
  for (const auto& [key, _] : doc.items()) {
    if (key != "model" && key != "training") {
      throw ValidationError("train config: unknown section '" + key + "'");
    }
  }
  json model_doc = doc.value("model", json::object());
  if (!a.variant.empty()) model_doc["variant"] = a.variant;
  if (a.freeze) model_doc["freeze_content_queries"] = true;
  const ModelConfig cfg = model_config_from_json(model_doc);
  TrainSettings settings = train_settings_from_json(doc.value("training", json::object()));
  if (a.epochs >= 0) settings.epochs = a.epochs;
  if (a.seed_set) settings.seed = a.seed;

  const Dataset train_set = load_dataset(a.dataset);
  std::optional<Dataset> val;
  if (!a.val_dataset.empty()) val = load_dataset(a.val_dataset);
  Model model(cfg, settings.seed);

  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot write " + log_path);
  train(model, train_set, val ? &*val : nullptr, settings,
        [&](const EpochRecord& r, const Model&) {
          log << to_json(r).dump() << '\n';
          log.flush();
          std::printf("epoch %3d  loss %.4f", r.epoch, r.loss);
          if (r.val_mgiou) std::printf("  val mgIoU %.4f  F1 %.4f", *r.val_mgiou, *r.val_f1);
          std::printf("\n");
          std::fflush(stdout);
        });
  save_checkpoint(model, a.out);
  std::printf("saved %s\n", a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string json_out;
};

int run_eval(const EvalArgs& a) {
  const Model model = load_checkpoint(a.checkpoint);
  const DatasetEval e = run_baseline(model, load_dataset(a.dataset));
  print_eval("baseline", e);
  if (!a.json_out.empty()) write_json(a.json_out, to_json(e));
  return 0;
}

struct AblateArgs {
  std::string checkpoint;
  std::string dataset;
  std::string component;
  double percentage = 0.3;
  std::string scope = "all_blocks";
  int block = -1;
  std::uint64_t seed = 0;
  std::string save_mask;
  std::string replay_mask;
};

int run_ablate(const AblateArgs& a) {
  Model model = load_checkpoint(a.checkpoint);
  const Dataset dataset = load_dataset(a.dataset);
  AblationMask mask;
  if (!a.replay_mask.empty()) {
    mask = ablation_mask_from_json(read_json(a.replay_mask));
    mask.spec.validate(model.config());
  } else {
    if (a.component.empty()) throw InvalidArgument("--component is required without --replay-mask");
    std::optional<int> block;
    if (a.scope == "single_block") {
      if (a.block < 0) throw InvalidArgument("--block is required with single_block scope");
      block = a.block;
    } else if (a.scope != "all_blocks") {
      throw InvalidArgument("--scope must be all_blocks or single_block");
    }
    const AblationSpec spec =
        AblationSpec::make(component_from_string(a.component), a.percentage, block, a.seed);
    mask = sample_mask(model, spec);
  }
  const DatasetEval base = run_baseline(model, dataset);
  DatasetEval ablated;
  {
    AblationHandle handle = apply(model, mask);
    ablated = evaluate(model, dataset);
  }
  if (!a.save_mask.empty()) write_json(a.save_mask, to_json(mask));
  print_eval("baseline", base);
  print_eval("ablated ", ablated);
  std::printf("%zu subunits zeroed\n", mask.subunit_count());
  std::printf("delta mgIoU %+.4f pp  delta F1 %+.4f pp\n", 100.0 * (ablated.mgiou - base.mgiou),
              100.0 * (ablated.weighted_f1 - base.weighted_f1));
  return 0;
}

struct SweepArgs {
  std::string config;
  std::string mode = "full";
  std::string out;
  int threads = 0;
};

int run_sweep_cmd(const SweepArgs& a) {
  SweepConfig cfg = sweep_config_from_json(read_json(a.config));
  if (a.threads > 0) cfg.threads = a.threads;
  const SweepResult result = run_sweep(cfg, sweep_mode_from_string(a.mode));
  std::vector<int> sizes;
  for (int n : cfg.variance_sizes) {
    if (n <= cfg.n_configs) sizes.push_back(n);
  }
  emit_report(result, a.out, sizes);
  int failed = 0;
  for (const auto& c : result.cells) {
    if (!c.error) continue;
    ++failed;
    std::fprintf(stderr, "cell %s pct %g block %d failed: %s\n", to_string(c.component).c_str(),
                 c.percentage, c.block.value_or(-1), c.error->c_str());
  }
  std::printf("%zu cells (%d failed), report in %s\n", result.cells.size(), failed,
              a.out.c_str());
  return failed ? 2 : 0;
}

struct ReportArgs {
  std::string in;
  std::string out;
  std::vector<int> variance_sizes;
};

int run_report(const ReportArgs& a) {
  const SweepResult result = load_sweep_result(a.in);
  emit_report(result, a.out.empty() ? a.in : a.out, a.variance_sizes);
  std::printf("%zu cells from %zu configurations\n", result.cells.size(), result.rows.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy detection transformers and ablation sweeps"};
  app.require_subcommand(1);

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Render a synthetic shapes dataset");
  datagen->add_option("--n-images", dg.n_images, "Number of images")->capture_default_str();
  datagen->add_option("--image-size", dg.image_size, "Square image side")->capture_default_str();
  datagen->add_option("--seed", dg.seed, "Generator seed")->capture_default_str();
  datagen->add_option("--out", dg.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", tr.config, "JSON with optional 'model' and 'training' sections");
  train_cmd->add_option("--variant", tr.variant, "detr_mini, ddetr_mini or dino_mini");
  train_cmd->add_option("--dataset", tr.dataset, "Training dataset directory")->required();
  train_cmd->add_option("--val-dataset", tr.val_dataset, "Validation dataset directory");
  train_cmd->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  auto* seed_opt = train_cmd->add_option("--seed", tr.seed, "Override the training seed");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", tr.log, "Metric log (JSON lines); default <out>.log.jsonl");
  train_cmd->add_flag("--freeze-content-queries", tr.freeze, "Zero and freeze content queries");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--dataset", ev.dataset)->required();
  eval_cmd->add_option("--json", ev.json_out, "Also write the evaluation as JSON");

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Evaluate one ablation configuration");
  ablate->add_option("--checkpoint", ab.checkpoint)->required();
  ablate->add_option("--dataset", ab.dataset)->required();
  ablate->add_option("--component", ab.component,
                     "query_embeddings, reference_points, encoder_mhsa, decoder_mhsa, decoder_mhca");
  ablate->add_option("--percentage", ab.percentage, "Share in [0, 1]")->capture_default_str();
  ablate->add_option("--scope", ab.scope, "all_blocks or single_block")->capture_default_str();
  ablate->add_option("--block", ab.block, "Block index for single_block");
  ablate->add_option("--seed", ab.seed)->capture_default_str();
  ablate->add_option("--save-mask", ab.save_mask, "Write the sampled mask as JSON");
  ablate->add_option("--replay-mask", ab.replay_mask, "Apply a saved mask instead of sampling");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Run a full or block-wise ablation sweep");
  sweep->add_option("--config", sw.config, "Sweep config JSON")->required();
  sweep->add_option("--mode", sw.mode, "full or blockwise")->capture_default_str();
  sweep->add_option("--out", sw.out, "Report directory")->required();
  sweep->add_option("--threads", sw.threads, "Override the configured worker count");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Rebuild tables and plots from a sweep directory");
  report->add_option("--in", rp.in, "Sweep output directory")->required();
  report->add_option("--out", rp.out, "Destination (default: --in)");
  report->add_option("--variance-sizes", rp.variance_sizes, "Sample sizes for variance.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  tr.seed_set = seed_opt->count() > 0;

  try {
    if (*datagen) return run_datagen(dg);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*ablate) return run_ablate(ab);
    if (*sweep) return run_sweep_cmd(sw);
    if (*report) return run_report(rp);
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 1;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return 2;
  }
  return 0;
}
