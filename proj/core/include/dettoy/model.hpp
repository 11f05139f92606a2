#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dettoy/layers.hpp"
#include "dettoy/matching.hpp"
#include "dettoy/model_config.hpp"
#include "dettoy/parameters.hpp"
#include "dettoy/png_io.hpp"

namespace dettoy {

/// Class logits (Q x (classes+1)) and normalized (cx, cy, w, h) boxes (Q x 4).
struct HeadOutput {
  ad::Var logits;
  ad::Var boxes;
};

struct ModelOutput {
  /// One entry per decoder block; the last is the final prediction.
  std::vector<HeadOutput> blocks;
  /// dino_mini: the top-ranked encoder tokens used as anchors.
  std::optional<HeadOutput> encoder_proposals;
  /// Per decoder block: the previous-box state feeding the block's refinement.
  std::vector<ad::Var> box_inputs;
  std::vector<ad::Var> box_deltas;

  const HeadOutput& final_output() const { return blocks.back(); }
};

/// Decoded predictions of one image.
struct Prediction {
  std::vector<Detection> detections;               ///< final block
  std::vector<std::vector<Detection>> per_block;   ///< every decoder block
};

/// Miniature detection transformer: strided conv backbone, transformer encoder over the
/// last `num_levels` stages, decoder with per-block class/box heads.
class Model {
 public:
  Model(ModelConfig config, std::uint64_t init_seed);
  Model(ModelConfig config, ParameterStore parameters);
  Model(const Model& other);
  Model& operator=(const Model& other);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  /// Records the forward pass of one image on `binding`'s tape.
  ModelOutput forward(ParameterBinding& binding, const GrayImage& image) const;

  /// Inference without gradient recording. Throws InvalidArgument on a wrong image size.
  Prediction predict(const GrayImage& image) const;

  /// Paths of the query tables (content, and positional where present).
  std::vector<std::string> query_table_paths() const;
  static std::string content_query_path() { return "decoder.query.content"; }

  /// Exclusive-access token for ablation; returns false if already held.
  bool try_lock_parameters() const;
  void unlock_parameters() const;

 private:
  void init_parameters(std::uint64_t seed);

  ModelConfig config_;
  ParameterStore params_;
  mutable std::unique_ptr<std::atomic<bool>> locked_;
};

/// Softmax-decoded detections from raw head outputs.
std::vector<Detection> decode_head(const ad::Matrix& logits, const ad::Matrix& boxes);

/// Image pixels as an (H*W) x 1 matrix scaled to [0, 1].
ad::Matrix image_tensor(const GrayImage& image);

}  // namespace dettoy
