#include "dettoy/model_config.hpp"

#include <set>

#include "dettoy/error.hpp"
#include "dettoy/shapes_data.hpp"

namespace dettoy {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::DetrMini:
      return "detr_mini";
    case Variant::DdetrMini:
      return "ddetr_mini";
    case Variant::DinoMini:
      return "dino_mini";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "detr_mini") return Variant::DetrMini;
  if (name == "ddetr_mini") return Variant::DdetrMini;
  if (name == "dino_mini") return Variant::DinoMini;
  throw ValidationError("unknown model variant '" + name + "'");
}

ModelConfig ModelConfig::defaults(Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.num_levels = variant == Variant::DetrMini ? 1 : 2;
  cfg.look_forward_twice = variant == Variant::DinoMini;
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (embed_dim <= 0 || num_heads <= 0) fail("embed_dim and num_heads must be positive");
  if (embed_dim % num_heads != 0) fail("embed_dim must be divisible by num_heads");
  if (head_dim() < 4) fail("head dimension must be at least 4");
  if (embed_dim % 4 != 0) fail("embed_dim must be divisible by 4 for sine encodings");
  if (encoder_blocks < 1 || decoder_blocks < 1) fail("need at least one encoder and decoder block");
  if (num_queries < kMaxObjectsPerImage) {
    fail("num_queries must be at least the maximum objects per image (" +
         std::to_string(kMaxObjectsPerImage) + ")");
  }
  if (num_classes < 1) fail("num_classes must be positive");
  if (sampling_points < 1) fail("sampling_points must be at least 1");
  if (num_levels < 1 || num_levels > 3) fail("num_levels must be in [1, 3]");
  if (ffn_dim < 1) fail("ffn_dim must be positive");
  for (int c : backbone_channels) {
    if (c < 1) fail("backbone channels must be positive");
  }
  if (image_size < 16 || image_size % 8 != 0) fail("image_size must be a multiple of 8, >= 16");
  if (look_forward_twice && variant != Variant::DinoMini) {
    fail("look_forward_twice applies to dino_mini only");
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"variant", to_string(cfg.variant)},
          {"image_size", cfg.image_size},
          {"embed_dim", cfg.embed_dim},
          {"num_heads", cfg.num_heads},
          {"encoder_blocks", cfg.encoder_blocks},
          {"decoder_blocks", cfg.decoder_blocks},
          {"num_queries", cfg.num_queries},
          {"num_classes", cfg.num_classes},
          {"sampling_points", cfg.sampling_points},
          {"num_levels", cfg.num_levels},
          {"ffn_dim", cfg.ffn_dim},
          {"backbone_channels", cfg.backbone_channels},
          {"look_forward_twice", cfg.look_forward_twice},
          {"freeze_content_queries", cfg.freeze_content_queries}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("model config must be an object");
  const Variant variant =
      variant_from_string(doc.contains("variant") ? doc.at("variant").get<std::string>()
                                                  : std::string("detr_mini"));
  ModelConfig cfg = ModelConfig::defaults(variant);
  static const std::set<std::string> known = {
      "variant",         "image_size",      "embed_dim",         "num_heads",
      "encoder_blocks",  "decoder_blocks",  "num_queries",       "num_classes",
      "sampling_points", "num_levels",      "ffn_dim",           "backbone_channels",
      "look_forward_twice", "freeze_content_queries"};
  try {
    for (const auto& [key, value] : doc.items()) {
      if (!known.count(key)) throw ValidationError("model config: unknown key '" + key + "'");
      if (key == "image_size") cfg.image_size = value.get<int>();
      else if (key == "embed_dim") cfg.embed_dim = value.get<int>();
      else if (key == "num_heads") cfg.num_heads = value.get<int>();
      else if (key == "encoder_blocks") cfg.encoder_blocks = value.get<int>();
      else if (key == "decoder_blocks") cfg.decoder_blocks = value.get<int>();
      else if (key == "num_queries") cfg.num_queries = value.get<int>();
      else if (key == "num_classes") cfg.num_classes = value.get<int>();
      else if (key == "sampling_points") cfg.sampling_points = value.get<int>();
      else if (key == "num_levels") cfg.num_levels = value.get<int>();
      else if (key == "ffn_dim") cfg.ffn_dim = value.get<int>();
      else if (key == "backbone_channels") cfg.backbone_channels = value.get<std::array<int, 3>>();
      else if (key == "look_forward_twice") cfg.look_forward_twice = value.get<bool>();
      else if (key == "freeze_content_queries") cfg.freeze_content_queries = value.get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace dettoy
