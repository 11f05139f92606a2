#include "dettoy/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dettoy/error.hpp"

namespace dettoy {

namespace {

void require_xyxy(const Box& b) {
  if (b.format != BoxFormat::XyxyAbs) {
    throw InvalidArgument("expected an XYXY_ABS box, got " + to_string(b));
  }
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

bool Box::valid() const {
  if (!std::isfinite(c1) || !std::isfinite(c2) || !std::isfinite(c3) || !std::isfinite(c4)) {
    return false;
  }
  if (format == BoxFormat::XyxyAbs) return c1 <= c3 && c2 <= c4;
  return in_unit(c1) && in_unit(c2) && in_unit(c3) && in_unit(c4);
}

double Box::area() const {
  if (format == BoxFormat::XyxyAbs) {
    return std::max(0.0, c3 - c1) * std::max(0.0, c4 - c2);
  }
  return std::max(0.0, c3) * std::max(0.0, c4);
}

std::string to_string(const Box& box) {
  std::ostringstream out;
  out << (box.format == BoxFormat::XyxyAbs ? "xyxy(" : "cxcywh(") << box.c1 << ", " << box.c2
      << ", " << box.c3 << ", " << box.c4 << ")";
  return out.str();
}

Box to_xyxy(const Box& box, double image_width, double image_height) {
  if (!(image_width > 0.0) || !(image_height > 0.0)) {
    throw InvalidArgument("image dimensions must be positive");
  }
  if (box.format == BoxFormat::XyxyAbs) return box;
  const double cx = box.c1 * image_width;
  const double cy = box.c2 * image_height;
  const double hw = 0.5 * box.c3 * image_width;
  const double hh = 0.5 * box.c4 * image_height;
  return Box::xyxy(cx - hw, cy - hh, cx + hw, cy + hh);
}

Box to_cxcywh(const Box& box, double image_width, double image_height) {
  if (!(image_width > 0.0) || !(image_height > 0.0)) {
    throw InvalidArgument("image dimensions must be positive");
  }
  if (box.format == BoxFormat::CxcywhNorm) return box;
  return Box::cxcywh(0.5 * (box.c1 + box.c3) / image_width, 0.5 * (box.c2 + box.c4) / image_height,
                     (box.c3 - box.c1) / image_width, (box.c4 - box.c2) / image_height);
}

double iou(const Box& a, const Box& b) {
  require_xyxy(a);
  require_xyxy(b);
  const double iw = std::max(0.0, std::min(a.c3, b.c3) - std::max(a.c1, b.c1));
  const double ih = std::max(0.0, std::min(a.c4, b.c4) - std::max(a.c2, b.c2));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  require_xyxy(a);
  require_xyxy(b);
  const double iw = std::max(0.0, std::min(a.c3, b.c3) - std::max(a.c1, b.c1));
  const double ih = std::max(0.0, std::min(a.c4, b.c4) - std::max(a.c2, b.c2));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double enclosing = (std::max(a.c3, b.c3) - std::min(a.c1, b.c1)) *
                           (std::max(a.c4, b.c4) - std::min(a.c2, b.c2));
  if (enclosing <= 0.0) return 0.0;
  const double iou_value = uni > 0.0 ? inter / uni : 0.0;
  return iou_value - (enclosing - uni) / enclosing;
}

}  // namespace dettoy
