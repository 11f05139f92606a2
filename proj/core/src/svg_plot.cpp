#include "dettoy/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "dettoy/error.hpp"

namespace dettoy {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 55;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// 1, 2 or 5 times a power of ten, giving roughly `target` intervals.
double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

struct Axis {
  double lo, hi, step;

  static Axis fit(double lo, double hi) {
    if (!(hi > lo)) {
      const double pad = std::max(1.0, std::abs(lo) * 0.1);
      lo -= pad;
      hi += pad;
    }
    const double step = nice_step(hi - lo, 5);
    return {std::floor(lo / step) * step, std::ceil(hi / step) * step, step};
  }
};

}  // namespace

std::string render_svg(const LinePlot& plot) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = 0.0, ymax = 0.0;  // keep the zero line in view
  for (const auto& s : plot.series) {
    if (s.x.size() != s.y.size() || (!s.spread.empty() && s.spread.size() != s.y.size())) {
      throw InvalidArgument("plot series '" + s.label + "' has mismatched lengths");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double sp = s.spread.empty() ? 0.0 : s.spread[i];
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i] - sp);
      ymax = std::max(ymax, s.y[i] + sp);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0;
  const Axis xa = Axis::fit(xmin, xmax);
  const Axis ya = Axis::fit(ymin, ymax);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xa.lo) / (xa.hi - xa.lo) * pw; };
  auto py = [&](double y) { return kTop + (ya.hi - y) / (ya.hi - ya.lo) * ph; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(plot.title) << "</text>\n";

  for (double t = ya.lo; t <= ya.hi + ya.step * 1e-6; t += ya.step) {
    o << "<line x1=\"" << num(kLeft) << "\" x2=\"" << num(kLeft + pw) << "\" y1=\"" << num(py(t))
      << "\" y2=\"" << num(py(t)) << "\" stroke=\"" << (std::abs(t) < ya.step * 1e-6 ? "#888" : "#e5e5e5")
      << "\"/>\n";
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(t) + 4)
      << "\" text-anchor=\"end\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  }
  for (double t = xa.lo; t <= xa.hi + xa.step * 1e-6; t += xa.step) {
    o << "<text x=\"" << num(px(t)) << "\" y=\"" << num(kTop + ph + 16)
      << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  }
  o << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw)
    << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 12)
    << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(plot.x_label) << "</text>\n";
  o << "<text transform=\"translate(18 " << num(kTop + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << escape(plot.y_label)
    << "</text>\n";

  for (const auto& s : plot.series) {
    if (s.x.empty()) continue;
    if (!s.spread.empty()) {
      o << "<polygon fill=\"" << s.color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        o << num(px(s.x[i])) << ',' << num(py(s.y[i] + s.spread[i])) << ' ';
      }
      for (std::size_t i = s.x.size(); i-- > 0;) {
        o << num(px(s.x[i])) << ',' << num(py(s.y[i] - s.spread[i])) << ' ';
      }
      o << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\""
      << (s.dashed ? " stroke-dasharray=\"7 4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double cx = px(s.x[i]), cy = py(s.y[i]);
      if (s.marker == Marker::Dot) {
        o << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"4\" fill=\"" << s.color
          << "\"/>\n";
      } else {
        o << "<path d=\"M" << num(cx - 4) << ' ' << num(cy - 4) << " L" << num(cx + 4) << ' '
          << num(cy + 4) << " M" << num(cx - 4) << ' ' << num(cy + 4) << " L" << num(cx + 4)
          << ' ' << num(cy - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
      }
    }
  }

  double ly = kTop + 10;
  for (const auto& s : plot.series) {
    const double lx = kLeft + pw + 14;
    o << "<line x1=\"" << num(lx) << "\" x2=\"" << num(lx + 28) << "\" y1=\"" << num(ly)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
      << (s.dashed ? " stroke-dasharray=\"7 4\"" : "") << "/>\n";
    o << "<text x=\"" << num(lx + 34) << "\" y=\"" << num(ly + 4) << "\" font-size=\"11\">"
      << escape(s.label) << "</text>\n";
    ly += 20;
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace dettoy
