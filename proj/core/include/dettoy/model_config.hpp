#pragma once

#include <array>
#include <string>

#include <nlohmann/json.hpp>

namespace dettoy {

enum class Variant { DetrMini, DdetrMini, DinoMini };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

/// Architecture of a toy detection transformer.
struct ModelConfig {
  Variant variant = Variant::DetrMini;
  int image_size = 64;
  int embed_dim = 64;
  int num_heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 3;
  int num_queries = 10;
  int num_classes = 3;  ///< foreground classes; no-object is implicit at index num_classes
  int sampling_points = 2;
  int num_levels = 2;
  int ffn_dim = 128;
  std::array<int, 3> backbone_channels{16, 32, 64};
  bool look_forward_twice = false;
  bool freeze_content_queries = false;

  /// Defaults for a variant. detr_mini attends over the coarsest level only.
  static ModelConfig defaults(Variant variant);

  int head_dim() const { return embed_dim / num_heads; }
  bool deformable() const { return variant != Variant::DetrMini; }

  /// Throws ValidationError describing the first violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep the variant defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& doc);

}  // namespace dettoy
