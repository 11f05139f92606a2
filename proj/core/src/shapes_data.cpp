#include "dettoy/shapes_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "dettoy/error.hpp"
#include "dettoy/random.hpp"

namespace dettoy {

namespace fs = std::filesystem;

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Circle:
      return "circle";
    case ShapeKind::Square:
      return "square";
    case ShapeKind::Triangle:
      return "triangle";
  }
  return "unknown";
}

std::array<double, 4> SceneObject::coco_bbox() const {
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(side),
          static_cast<double>(side)};
}

double SceneObject::area() const {
  const double s = side;
  switch (shape) {
    case ShapeKind::Circle:
      return std::numbers::pi * 0.25 * s * s;
    case ShapeKind::Square:
      return s * s;
    case ShapeKind::Triangle:
      return 0.5 * s * s;
  }
  return 0.0;
}

namespace {

bool overlaps(const SceneObject& a, const SceneObject& b) {
  constexpr int gap = 1;
  return a.x0 < b.x0 + b.side + gap && b.x0 < a.x0 + a.side + gap &&
         a.y0 < b.y0 + b.side + gap && b.y0 < a.y0 + a.side + gap;
}

bool covers(const SceneObject& o, double px, double py) {
  const double s = o.side;
  switch (o.shape) {
    case ShapeKind::Square:
      return px >= o.x0 && px < o.x0 + s && py >= o.y0 && py < o.y0 + s;
    case ShapeKind::Circle: {
      const double r = 0.5 * s;
      const double dx = px - (o.x0 + r);
      const double dy = py - (o.y0 + r);
      return dx * dx + dy * dy <= r * r;
    }
    case ShapeKind::Triangle: {
      // Apex at top centre, base along the bottom edge.
      if (py < o.y0 || py > o.y0 + s) return false;
      const double half = 0.5 * (py - o.y0);
      const double cx = o.x0 + 0.5 * s;
      return px >= cx - half && px <= cx + half;
    }
  }
  return false;
}

}  // namespace

SceneSpec sample_scene(int image_size, std::uint64_t seed) {
  if (image_size < kMaxObjectSide + 2) {
    throw InvalidArgument("image_size must be at least " + std::to_string(kMaxObjectSide + 2));
  }
  Rng rng(seed);
  SceneSpec scene;
  scene.image_size = image_size;
  const int wanted = static_cast<int>(rng.between(1, kMaxObjectsPerImage));
  for (int k = 0; k < wanted; ++k) {
    SceneObject obj;
    obj.shape = static_cast<ShapeKind>(rng.below(kNumShapeClasses));
    obj.fill = static_cast<std::uint8_t>(rng.between(120, 255));
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      obj.side = static_cast<int>(rng.between(kMinObjectSide, kMaxObjectSide));
      obj.x0 = static_cast<int>(rng.between(1, image_size - obj.side - 1));
      obj.y0 = static_cast<int>(rng.between(1, image_size - obj.side - 1));
      placed = std::none_of(scene.objects.begin(), scene.objects.end(),
                            [&](const SceneObject& other) { return overlaps(obj, other); });
    }
    if (placed) scene.objects.push_back(obj);
  }
  return scene;
}

GrayImage render_scene(const SceneSpec& scene, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  GrayImage img;
  img.width = scene.image_size;
  img.height = scene.image_size;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(40));
  for (const auto& obj : scene.objects) {
    for (int y = obj.y0; y < obj.y0 + obj.side; ++y) {
      for (int x = obj.x0; x < obj.x0 + obj.side; ++x) {
        if (covers(obj, x + 0.5, y + 0.5)) {
          img.pixels[static_cast<std::size_t>(y) * img.width + x] = obj.fill;
        }
      }
    }
  }
  return img;
}

void AnnotationFile::validate() const {
  std::set<long> image_ids;
  for (const auto& im : images) {
    if (!image_ids.insert(im.id).second) {
      throw ValidationError("duplicate image id " + std::to_string(im.id));
    }
    if (im.width <= 0 || im.height <= 0) {
      throw ValidationError("image " + std::to_string(im.id) + " has non-positive size");
    }
  }
  std::set<int> category_ids;
  for (const auto& c : categories) {
    if (!category_ids.insert(c.id).second) {
      throw ValidationError("duplicate category id " + std::to_string(c.id));
    }
  }
  std::set<long> annotation_ids;
  for (const auto& a : annotations) {
    const std::string where = "annotation " + std::to_string(a.id);
    if (!annotation_ids.insert(a.id).second) throw ValidationError("duplicate " + where);
    if (!image_ids.count(a.image_id)) {
      throw ValidationError(where + " references missing image_id " +
                            std::to_string(a.image_id));
    }
    if (!category_ids.count(a.category_id)) {
      throw ValidationError(where + " references missing category_id " +
                            std::to_string(a.category_id));
    }
    if (!(a.bbox[2] > 0.0) || !(a.bbox[3] > 0.0)) {
      throw ValidationError(where + " has a non-positive bbox width or height");
    }
  }
}

nlohmann::ordered_json to_json(const AnnotationFile& file) {
  nlohmann::ordered_json doc;
  doc["images"] = nlohmann::ordered_json::array();
  for (const auto& im : file.images) {
    doc["images"].push_back(
        {{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file_name", im.file_name}});
  }
  doc["annotations"] = nlohmann::ordered_json::array();
  for (const auto& a : file.annotations) {
    doc["annotations"].push_back({{"id", a.id},
                                  {"image_id", a.image_id},
                                  {"category_id", a.category_id},
                                  {"bbox", a.bbox},
                                  {"area", a.area},
                                  {"iscrowd", a.iscrowd}});
  }
  doc["categories"] = nlohmann::ordered_json::array();
  for (const auto& c : file.categories) doc["categories"].push_back({{"id", c.id}, {"name", c.name}});
  return doc;
}

namespace {

template <typename T>
T field(const nlohmann::json& rec, const char* key, const std::string& where) {
  if (!rec.is_object() || !rec.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  try {
    return rec.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(where + ": field '" + key + "' has the wrong type");
  }
}

const nlohmann::json& array_field(const nlohmann::json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key) || !doc.at(key).is_array()) {
    throw ParseError(std::string("annotation document lacks the '") + key + "' array");
  }
  return doc.at(key);
}

}  // namespace

AnnotationFile annotation_file_from_json(const nlohmann::json& doc) {
  AnnotationFile file;
  const auto& images = array_field(doc, "images");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    ImageRecord im;
    im.id = field<long>(images[i], "id", where);
    im.width = field<int>(images[i], "width", where);
    im.height = field<int>(images[i], "height", where);
    im.file_name = field<std::string>(images[i], "file_name", where);
    file.images.push_back(std::move(im));
  }
  const auto& anns = array_field(doc, "annotations");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    AnnotationRecord a;
    a.id = field<long>(anns[i], "id", where);
    a.image_id = field<long>(anns[i], "image_id", where);
    a.category_id = field<int>(anns[i], "category_id", where);
    const auto bbox = field<std::vector<double>>(anns[i], "bbox", where);
    if (bbox.size() != 4) throw ParseError(where + ": bbox must have 4 entries");
    std::copy(bbox.begin(), bbox.end(), a.bbox.begin());
    a.area = anns[i].contains("area") ? field<double>(anns[i], "area", where)
                                      : bbox[2] * bbox[3];
    a.iscrowd = anns[i].contains("iscrowd") ? field<int>(anns[i], "iscrowd", where) : 0;
    file.annotations.push_back(a);
  }
  const auto& cats = array_field(doc, "categories");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "categories[" + std::to_string(i) + "]";
    CategoryRecord c;
    c.id = field<int>(cats[i], "id", where);
    c.name = field<std::string>(cats[i], "name", where);
    file.categories.push_back(std::move(c));
  }
  file.validate();
  return file;
}

void save_annotations(const AnnotationFile& file, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(file).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

AnnotationFile load_annotations(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return annotation_file_from_json(doc);
}

namespace {

std::string image_file_name(long id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%06ld.png", id);
  return buf;
}

struct GeneratedImage {
  ImageRecord record;
  SceneSpec scene;
  GrayImage image;
};

GeneratedImage generate_image(int index, int image_size, std::uint64_t seed) {
  const std::uint64_t image_seed = derive_seed(seed, static_cast<std::uint64_t>(index));
  GeneratedImage g;
  g.record.id = index + 1;
  g.record.width = image_size;
  g.record.height = image_size;
  g.record.file_name = image_file_name(g.record.id);
  g.scene = sample_scene(image_size, image_seed);
  g.image = render_scene(g.scene, derive_seed(image_seed, 1));
  return g;
}

void add_categories(AnnotationFile& file) {
  for (int c = 0; c < kNumShapeClasses; ++c) {
    file.categories.push_back({c + 1, shape_name(static_cast<ShapeKind>(c))});
  }
}

void add_annotations(AnnotationFile& file, const GeneratedImage& g) {
  for (const auto& obj : g.scene.objects) {
    AnnotationRecord a;
    a.id = static_cast<long>(file.annotations.size()) + 1;
    a.image_id = g.record.id;
    a.category_id = static_cast<int>(obj.shape) + 1;
    a.bbox = obj.coco_bbox();
    a.area = obj.area();
    file.annotations.push_back(a);
  }
}

std::vector<GroundTruth> ground_truths_for(const AnnotationFile& file, const Dataset& ds,
                                           long image_id) {
  std::vector<GroundTruth> gts;
  for (const auto& a : file.annotations) {
    if (a.image_id != image_id) continue;
    gts.push_back({Box::xyxy(a.bbox[0], a.bbox[1], a.bbox[0] + a.bbox[2], a.bbox[1] + a.bbox[3]),
                   ds.label_of(a.category_id)});
  }
  return gts;
}

}  // namespace

AnnotationFile generate_dataset(int n_images, int image_size, std::uint64_t seed,
                                const fs::path& output_dir) {
  if (n_images < 1) throw InvalidArgument("n_images must be at least 1");
  std::error_code ec;
  fs::create_directories(output_dir / kImageDirName, ec);
  if (ec) throw IoError("cannot create " + (output_dir / kImageDirName).string() + ": " + ec.message());

  AnnotationFile file;
  add_categories(file);
  for (int i = 0; i < n_images; ++i) {
    GeneratedImage g = generate_image(i, image_size, seed);
    write_png(output_dir / kImageDirName / g.record.file_name, g.image);
    add_annotations(file, g);
    file.images.push_back(g.record);
  }
  file.validate();
  save_annotations(file, output_dir / kAnnotationFileName);
  return file;
}

int Dataset::label_of(int category_id) const {
  std::vector<int> ids;
  for (const auto& c : annotations.categories) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end());
  const auto it = std::lower_bound(ids.begin(), ids.end(), category_id);
  if (it == ids.end() || *it != category_id) {
    throw InvalidArgument("unknown category id " + std::to_string(category_id));
  }
  return static_cast<int>(it - ids.begin());
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.annotations = load_annotations(dir / kAnnotationFileName);
  ds.num_classes = static_cast<int>(ds.annotations.categories.size());
  for (const auto& rec : ds.annotations.images) {
    DatasetImage item;
    item.id = rec.id;
    item.image = read_png(dir / kImageDirName / rec.file_name);
    if (item.image.width != rec.width || item.image.height != rec.height) {
      throw ValidationError(rec.file_name + ": pixel size disagrees with the annotation record");
    }
    item.ground_truths = ground_truths_for(ds.annotations, ds, rec.id);
    ds.images.push_back(std::move(item));
  }
  return ds;
}

Dataset make_dataset(int n_images, int image_size, std::uint64_t seed) {
  if (n_images < 1) throw InvalidArgument("n_images must be at least 1");
  Dataset ds;
  add_categories(ds.annotations);
  for (int i = 0; i < n_images; ++i) {
    GeneratedImage g = generate_image(i, image_size, seed);
    add_annotations(ds.annotations, g);
    ds.annotations.images.push_back(g.record);
    DatasetImage item;
    item.id = g.record.id;
    item.image = std::move(g.image);
    ds.images.push_back(std::move(item));
  }
  for (auto& item : ds.images) item.ground_truths = ground_truths_for(ds.annotations, ds, item.id);
  return ds;
}

}  // namespace dettoy
