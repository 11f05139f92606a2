#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dettoy/matching.hpp"
#include "dettoy/png_io.hpp"

namespace dettoy {

enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };

inline constexpr int kNumShapeClasses = 3;
inline constexpr int kMaxObjectsPerImage = 8;
inline constexpr int kMinObjectSide = 8;
inline constexpr int kMaxObjectSide = 20;

const char* shape_name(ShapeKind kind);

struct SceneObject {
  ShapeKind shape = ShapeKind::Circle;
  int x0 = 0;  ///< left edge of the bounding square, pixels
  int y0 = 0;  ///< top edge
  int side = kMinObjectSide;
  std::uint8_t fill = 255;

  /// Tight box as COCO [x, y, w, h].
  std::array<double, 4> coco_bbox() const;
  double area() const;
};

struct SceneSpec {
  int image_size = 64;
  std::vector<SceneObject> objects;
};

/// Samples a scene: 1..8 non-overlapping shapes, classes drawn uniformly.
SceneSpec sample_scene(int image_size, std::uint64_t seed);

/// Renders shapes as solid fills over a low-intensity noisy background.
GrayImage render_scene(const SceneSpec& scene, std::uint64_t noise_seed);

// --- COCO detection subset ---

struct ImageRecord {
  long id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct AnnotationRecord {
  long id = 0;
  long image_id = 0;
  int category_id = 0;
  std::array<double, 4> bbox{};  ///< [x, y, w, h] absolute pixels
  double area = 0.0;
  int iscrowd = 0;
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct CategoryRecord {
  int id = 0;
  std::string name;
  friend bool operator==(const CategoryRecord&, const CategoryRecord&) = default;
};

struct AnnotationFile {
  std::vector<ImageRecord> images;
  std::vector<AnnotationRecord> annotations;
  std::vector<CategoryRecord> categories;

  /// Throws ValidationError on dangling references, duplicate ids or empty boxes.
  void validate() const;
  friend bool operator==(const AnnotationFile&, const AnnotationFile&) = default;
};

nlohmann::ordered_json to_json(const AnnotationFile& file);
/// Throws ParseError naming the offending record when a field is missing or mistyped.
AnnotationFile annotation_file_from_json(const nlohmann::json& doc);

void save_annotations(const AnnotationFile& file, const std::filesystem::path& path);
AnnotationFile load_annotations(const std::filesystem::path& path);

inline constexpr const char* kAnnotationFileName = "annotations.json";
inline constexpr const char* kImageDirName = "images";

/// Writes `n_images` rendered images plus annotations.json into `output_dir`.
/// Output is a pure function of (n_images, image_size, seed).
AnnotationFile generate_dataset(int n_images, int image_size, std::uint64_t seed,
                                const std::filesystem::path& output_dir);

/// Image plus its ground truths (XYXY absolute boxes, labels 0-based).
struct DatasetImage {
  long id = 0;
  GrayImage image;
  std::vector<GroundTruth> ground_truths;
};

struct Dataset {
  AnnotationFile annotations;
  std::vector<DatasetImage> images;
  int num_classes = kNumShapeClasses;

  /// Maps a COCO category id to a dense label in [0, num_classes).
  int label_of(int category_id) const;
};

/// Loads annotations and all referenced images from a directory produced by generate_dataset.
Dataset load_dataset(const std::filesystem::path& dir);

/// Builds an in-memory dataset without touching the filesystem.
Dataset make_dataset(int n_images, int image_size, std::uint64_t seed);

}  // namespace dettoy
