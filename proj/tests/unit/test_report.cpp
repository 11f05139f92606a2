#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dettoy/error.hpp"
#include "dettoy/report.hpp"
#include "dettoy/svg_plot.hpp"
#include "test_support.hpp"

namespace dettoy {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SweepResult small_result(SweepMode mode) {
  const Model model(test::tiny_config(Variant::DetrMini), 4);
  const Dataset data = make_dataset(2, 32, 3);
  SweepConfig cfg;
  cfg.components = {Component::EncoderMhsa};
  cfg.percentages = {0.15, 0.5};
  cfg.n_configs = 3;
  cfg.master_seed = 2;
  return mode == SweepMode::Full ? run_full_sweep(model, data, cfg)
                                 : run_blockwise_sweep(model, data, cfg);
}

TEST(FormatReal, ShortestRoundTrip) {
  EXPECT_EQ(format_real(0.1), "0.1");
  EXPECT_EQ(format_real(-2.5), "-2.5");
  EXPECT_EQ(format_real(0.0), "0");
  const double x = 1.0 / 3.0;
  EXPECT_EQ(std::stod(format_real(x)), x);
}

TEST(EmitReport, SummaryRoundTripsExactly) {
  test::TempDir dir;
  const SweepResult r = small_result(SweepMode::Full);
  const std::vector<int> sizes{1, 3};
  emit_report(r, dir.path(), sizes);
  const std::string summary = slurp(dir.path() / "summary.csv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), kSummaryHeader);
  const auto cells = load_summary(dir.path() / "summary.csv");
  ASSERT_EQ(cells.size(), r.cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(cells[i].component, r.cells[i].component);
    EXPECT_EQ(cells[i].block, r.cells[i].block);
    EXPECT_EQ(cells[i].percentage, r.cells[i].percentage);
    EXPECT_EQ(cells[i].n_configs, r.cells[i].n_configs);
    EXPECT_EQ(cells[i].baseline_mgiou, r.cells[i].baseline_mgiou);
    EXPECT_EQ(cells[i].mean_delta_mgiou, r.cells[i].mean_delta_mgiou);
    EXPECT_EQ(cells[i].std_delta_mgiou, r.cells[i].std_delta_mgiou);
    EXPECT_EQ(cells[i].mean_delta_f1, r.cells[i].mean_delta_f1);
    EXPECT_EQ(cells[i].std_delta_f1, r.cells[i].std_delta_f1);
  }
  for (const char* f : {"configs.csv", "per_class.csv", "variance.csv", "sweep.json"}) {
    EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  }
  const fs::path plot = dir.path() / "plots" / "full_encoder_mhsa.svg";
  ASSERT_TRUE(fs::exists(plot));
  EXPECT_GT(fs::file_size(plot), 200u);
}

TEST(EmitReport, ReloadedResultReemitsIdentically) {
  test::TempDir a, b;
  const SweepResult r = small_result(SweepMode::Blockwise);
  emit_report(r, a.path());
  const SweepResult back = load_sweep_result(a.path());
  EXPECT_EQ(back.rows.size(), r.rows.size());
  emit_report(back, b.path());
  for (const char* f : {"summary.csv", "configs.csv", "per_class.csv", "config_classes.csv"}) {
    EXPECT_EQ(slurp(a.path() / f), slurp(b.path() / f)) << f;
  }
  const std::string summary = slurp(a.path() / "summary.csv");
  EXPECT_NE(summary.find("encoder_mhsa,single_block,0,"), std::string::npos);
}

TEST(EmitReport, RejectsEmptyAndUnwritable) {
  test::TempDir dir;
  SweepResult empty;
  EXPECT_THROW(emit_report(empty, dir.path()), InvalidArgument);
  std::ofstream(dir.path() / "file") << "x";
  EXPECT_THROW(emit_report(small_result(SweepMode::Full), dir.path() / "file" / "out"), IoError);
}

TEST(RenderSvg, StylesSeries) {
  LinePlot plot;
  plot.title = "t";
  plot.x_label = "x";
  plot.y_label = "y";
  plot.series.push_back({"mgIoU", {5, 15, 30}, {-1, -3, -8}, {0.5, 1, 2}, false, Marker::Dot,
                         "#1f77b4"});
  plot.series.push_back({"F1", {5, 15, 30}, {-2, -4, -9}, {}, true, Marker::Cross, "#d62728"});
  const std::string svg = render_svg(plot);
  EXPECT_EQ(svg.rfind("<svg", 0) == 0 || svg.rfind("<?xml", 0) == 0, true);
  EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
  EXPECT_NE(svg.find("fill-opacity"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace dettoy
