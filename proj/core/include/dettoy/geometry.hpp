#pragma once

#include <string>

namespace dettoy {

enum class BoxFormat {
  XyxyAbs,     ///< (x1, y1, x2, y2) in pixels
  CxcywhNorm,  ///< (cx, cy, w, h) as fractions of the image size
};

/// Axis-aligned bounding box. The meaning of c1..c4 depends on `format`.
struct Box {
  BoxFormat format = BoxFormat::XyxyAbs;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
  double c4 = 0.0;

  static Box xyxy(double x1, double y1, double x2, double y2) {
    return {BoxFormat::XyxyAbs, x1, y1, x2, y2};
  }
  static Box cxcywh(double cx, double cy, double w, double h) {
    return {BoxFormat::CxcywhNorm, cx, cy, w, h};
  }

  /// Checks the format invariants (ordered corners, or unit-range normalized values).
  bool valid() const;
  double area() const;

  friend bool operator==(const Box&, const Box&) = default;
};

std::string to_string(const Box& box);

/// Converts to absolute corner coordinates. XYXY input is returned unchanged.
/// Throws InvalidArgument for non-positive image dimensions.
Box to_xyxy(const Box& box, double image_width, double image_height);

/// Converts to normalized center/size coordinates. CXCYWH input is returned unchanged.
Box to_cxcywh(const Box& box, double image_width, double image_height);

/// Intersection over union of two XYXY boxes; 0 when the union has zero area.
double iou(const Box& a, const Box& b);

/// Generalized IoU: IoU minus the empty fraction of the smallest enclosing box.
/// Returns 0 when the enclosing box itself has zero area.
double giou(const Box& a, const Box& b);

}  // namespace dettoy
