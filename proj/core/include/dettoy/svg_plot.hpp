#pragma once

#include <string>
#include <vector>

namespace dettoy {

enum class Marker { Dot, Cross };

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> spread;  ///< optional; drawn as a shaded band y +/- spread
  bool dashed = false;
  Marker marker = Marker::Dot;
  std::string color = "#1f77b4";
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
};

/// Standalone SVG document. Throws InvalidArgument on mismatched series lengths.
std::string render_svg(const LinePlot& plot);

}  // namespace dettoy
