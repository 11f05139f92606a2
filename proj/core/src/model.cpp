#include "dettoy/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dettoy/error.hpp"
#include "dettoy/random.hpp"

namespace dettoy {

using ad::Index;
using ad::Matrix;
using ad::Var;

namespace {

std::string block_path(const char* stack, int i) {
  return std::string(stack) + ".block" + std::to_string(i);
}

Matrix xavier(Rng& rng, Index rows, Index cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

Matrix he_normal(Rng& rng, Index rows, Index cols) {
  const double std = std::sqrt(2.0 / static_cast<double>(rows));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

Matrix gaussian(Rng& rng, Index rows, Index cols, double std) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
  return m;
}

Matrix zeros(Index rows, Index cols) { return Matrix::Zero(rows, cols); }
Matrix ones(Index rows, Index cols) { return Matrix::Ones(rows, cols); }

struct LevelLayout {
  std::vector<ad::LevelShape> shapes;
  std::vector<int> stages;
  int tokens = 0;
};

LevelLayout level_layout(const ModelConfig& cfg) {
  LevelLayout layout;
  int size = cfg.image_size;
  std::vector<int> stage_sizes;
  for (int s = 0; s < 3; ++s) {
    size = ad::conv_out_size(size, 3, 2, 1);
    stage_sizes.push_back(size);
  }
  for (int l = 0; l < cfg.num_levels; ++l) {
    const int stage = 3 - cfg.num_levels + l;
    layout.stages.push_back(stage);
    layout.shapes.push_back({stage_sizes[stage], stage_sizes[stage], layout.tokens});
    layout.tokens += stage_sizes[stage] * stage_sizes[stage];
  }
  return layout;
}

void add_standard_attention(ParameterStore& p, Rng& rng, const std::string& prefix, int d) {
  p.add(prefix + ".W_q", xavier(rng, d, d));
  p.add(prefix + ".W_k", xavier(rng, d, d));
  p.add(prefix + ".W_v", xavier(rng, d, d));
  p.add(prefix + ".W_o", xavier(rng, d, d));
  p.add(prefix + ".b_o", zeros(1, d));
}

void add_deformable_attention(ParameterStore& p, Rng& rng, const std::string& prefix,
                              const ModelConfig& cfg) {
  const int d = cfg.embed_dim;
  const int h = cfg.num_heads;
  const int levels = cfg.num_levels;
  const int k = cfg.sampling_points;
  p.add(prefix + ".W_v", xavier(rng, d, d));
  p.add(prefix + ".W_o", xavier(rng, d, d));
  p.add(prefix + ".b_o", zeros(1, d));
  p.add(prefix + ".W_offset", zeros(d, 2 * h * levels * k));
  // Offsets start on a ring: head j points along angle 2*pi*j/h, point k at radius k+1.
  Matrix bias(1, 2 * h * levels * k);
  for (int head = 0; head < h; ++head) {
    const double theta = 2.0 * std::numbers::pi * head / h;
    double dx = std::cos(theta), dy = std::sin(theta);
    const double norm = std::max(std::abs(dx), std::abs(dy));
    dx /= norm;
    dy /= norm;
    for (int l = 0; l < levels; ++l) {
      for (int pt = 0; pt < k; ++pt) {
        const int s = (head * levels + l) * k + pt;
        bias(0, 2 * s) = dx * (pt + 1);
        bias(0, 2 * s + 1) = dy * (pt + 1);
      }
    }
  }
  p.add(prefix + ".b_offset", std::move(bias));
  p.add(prefix + ".W_attn", zeros(d, h * levels * k));
  p.add(prefix + ".b_attn", zeros(1, h * levels * k));
}

void add_norm(ParameterStore& p, const std::string& prefix, int d) {
  p.add(prefix + ".gamma", ones(1, d));
  p.add(prefix + ".beta", zeros(1, d));
}

void add_ffn(ParameterStore& p, Rng& rng, const std::string& prefix, int d, int f) {
  p.add(prefix + ".W1", xavier(rng, d, f));
  p.add(prefix + ".b1", zeros(1, f));
  p.add(prefix + ".W2", xavier(rng, f, d));
  p.add(prefix + ".b2", zeros(1, d));
}

void add_heads(ParameterStore& p, Rng& rng, const std::string& prefix, int d, int classes) {
  p.add(prefix + ".class_head.W", xavier(rng, d, classes + 1));
  p.add(prefix + ".class_head.b", zeros(1, classes + 1));
  p.add(prefix + ".box_head.W1", xavier(rng, d, d));
  p.add(prefix + ".box_head.b1", zeros(1, d));
  p.add(prefix + ".box_head.W2", zeros(d, 4));
  p.add(prefix + ".box_head.b2", zeros(1, 4));
}

// --- forward helpers ---

AttentionWeights standard_weights(ParameterBinding& b, const std::string& prefix) {
  return {b(prefix + ".W_q"), b(prefix + ".W_k"), b(prefix + ".W_v"), b(prefix + ".W_o"),
          b(prefix + ".b_o")};
}

DeformableWeights deformable_weights_of(ParameterBinding& b, const std::string& prefix) {
  return {b(prefix + ".W_v"),      b(prefix + ".W_o"),    b(prefix + ".b_o"),
          b(prefix + ".W_offset"), b(prefix + ".b_offset"), b(prefix + ".W_attn"),
          b(prefix + ".b_attn")};
}

Var norm(ParameterBinding& b, Var x, const std::string& prefix) {
  return ad::layer_norm(x, b(prefix + ".gamma"), b(prefix + ".beta"));
}

Var ffn(ParameterBinding& b, Var x, const std::string& prefix) {
  const Var h = ad::relu(ad::linear(x, b(prefix + ".W1"), b(prefix + ".b1")));
  return ad::linear(h, b(prefix + ".W2"), b(prefix + ".b2"));
}

Var box_delta(ParameterBinding& b, Var x, const std::string& prefix) {
  const Var h = ad::relu(ad::linear(x, b(prefix + ".box_head.W1"), b(prefix + ".box_head.b1")));
  return ad::linear(h, b(prefix + ".box_head.W2"), b(prefix + ".box_head.b2"));
}

Var class_logits(ParameterBinding& b, Var x, const std::string& prefix) {
  return ad::linear(x, b(prefix + ".class_head.W"), b(prefix + ".class_head.b"));
}

// Normalized centres of every token, level after level.
void token_centres(const LevelLayout& layout, std::vector<double>& xs, std::vector<double>& ys,
                   std::vector<int>& level_of) {
  for (std::size_t l = 0; l < layout.shapes.size(); ++l) {
    const auto& s = layout.shapes[l];
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        xs.push_back((x + 0.5) / s.width);
        ys.push_back((y + 0.5) / s.height);
        level_of.push_back(static_cast<int>(l));
      }
    }
  }
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t init_seed)
    : config_(std::move(config)), locked_(std::make_unique<std::atomic<bool>>(false)) {
  config_.validate();
  init_parameters(init_seed);
}

Model::Model(ModelConfig config, ParameterStore parameters)
    : config_(std::move(config)),
      params_(std::move(parameters)),
      locked_(std::make_unique<std::atomic<bool>>(false)) {
  config_.validate();
  Model reference(config_, 0);
  for (const auto& [path, m] : reference.params_) {
    if (!params_.contains(path)) throw ValidationError("checkpoint lacks parameter " + path);
    const Matrix& have = params_.at(path);
    if (have.rows() != m.rows() || have.cols() != m.cols()) {
      throw ValidationError("parameter " + path + " has shape " + std::to_string(have.rows()) +
                            "x" + std::to_string(have.cols()) + ", config expects " +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
  }
  if (params_.size() != reference.params_.size()) {
    throw ValidationError("checkpoint holds parameters the config does not define");
  }
}

Model::Model(const Model& other)
    : config_(other.config_),
      params_(other.params_),
      locked_(std::make_unique<std::atomic<bool>>(false)) {}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    config_ = other.config_;
    params_ = other.params_;
  }
  return *this;
}

bool Model::try_lock_parameters() const {
  bool expected = false;
  return locked_->compare_exchange_strong(expected, true);
}

void Model::unlock_parameters() const { locked_->store(false); }

std::vector<std::string> Model::query_table_paths() const {
  std::vector<std::string> paths{content_query_path()};
  if (config_.variant == Variant::DdetrMini) paths.push_back("decoder.query.positional");
  return paths;
}

void Model::init_parameters(std::uint64_t seed) {
  Rng rng(seed);
  const ModelConfig& c = config_;
  const int d = c.embed_dim;
  auto& p = params_;

  int cin = 1;
  for (int s = 0; s < 3; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s);
    const int cout = c.backbone_channels[s];
    p.add(prefix + ".conv0.weight", he_normal(rng, 9 * cin, cout));
    p.add(prefix + ".conv0.bias", zeros(1, cout));
    p.add(prefix + ".conv1.weight", he_normal(rng, 9 * cout, cout));
    p.add(prefix + ".conv1.bias", zeros(1, cout));
    cin = cout;
  }
  const LevelLayout layout = level_layout(c);
  for (int l = 0; l < c.num_levels; ++l) {
    const std::string prefix = "input_proj.level" + std::to_string(l);
    p.add(prefix + ".weight", xavier(rng, c.backbone_channels[layout.stages[l]], d));
    p.add(prefix + ".bias", zeros(1, d));
  }
  p.add("level_embed", gaussian(rng, c.num_levels, d, 1.0));

  for (int i = 0; i < c.encoder_blocks; ++i) {
    const std::string prefix = block_path("encoder", i);
    if (c.deformable()) {
      add_deformable_attention(p, rng, prefix + ".mhsa", c);
    } else {
      add_standard_attention(p, rng, prefix + ".mhsa", d);
    }
    add_norm(p, prefix + ".norm1", d);
    add_ffn(p, rng, prefix + ".ffn", d, c.ffn_dim);
    add_norm(p, prefix + ".norm2", d);
  }
  for (int i = 0; i < c.decoder_blocks; ++i) {
    const std::string prefix = block_path("decoder", i);
    add_standard_attention(p, rng, prefix + ".mhsa", d);
    if (c.deformable()) {
      add_deformable_attention(p, rng, prefix + ".mhca", c);
    } else {
      add_standard_attention(p, rng, prefix + ".mhca", d);
    }
    add_norm(p, prefix + ".norm1", d);
    add_norm(p, prefix + ".norm2", d);
    add_norm(p, prefix + ".norm3", d);
    add_ffn(p, rng, prefix + ".ffn", d, c.ffn_dim);
    add_heads(p, rng, prefix, d, c.num_classes);
  }

  p.add(content_query_path(), c.freeze_content_queries ? zeros(c.num_queries, d)
                                                       : gaussian(rng, c.num_queries, d, 1.0));
  if (c.variant == Variant::DdetrMini) {
    p.add("decoder.query.positional", gaussian(rng, c.num_queries, d, 1.0));
    p.add("decoder.reference_point_head.W", xavier(rng, d, 2));
    p.add("decoder.reference_point_head.b", zeros(1, 2));
  }
  if (c.variant == Variant::DinoMini) {
    p.add("encoder_output.proj.W", xavier(rng, d, d));
    p.add("encoder_output.proj.b", zeros(1, d));
    add_norm(p, "encoder_output.norm", d);
    add_heads(p, rng, "encoder_output", d, c.num_classes);
    p.add("decoder.query_pos_head.W1", xavier(rng, 2 * d, d));
    p.add("decoder.query_pos_head.b1", zeros(1, d));
    p.add("decoder.query_pos_head.W2", xavier(rng, d, d));
    p.add("decoder.query_pos_head.b2", zeros(1, d));
  }
}

Matrix image_tensor(const GrayImage& image) {
  Matrix x(static_cast<Index>(image.width) * image.height, 1);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    x(static_cast<Index>(i), 0) = image.pixels[i] / 255.0;
  }
  return x;
}

ModelOutput Model::forward(ParameterBinding& b, const GrayImage& image) const {
  const ModelConfig& c = config_;
  if (image.width != c.image_size || image.height != c.image_size) {
    throw InvalidArgument("image is " + std::to_string(image.width) + "x" +
                          std::to_string(image.height) + ", model expects " +
                          std::to_string(c.image_size) + "x" + std::to_string(c.image_size));
  }
  ad::Tape& tape = b.tape();
  const int d = c.embed_dim;
  const int heads = c.num_heads;
  const LevelLayout layout = level_layout(c);

  // Backbone.
  std::vector<Var> stage_out;
  Var x = tape.constant(image_tensor(image));
  int size = c.image_size;
  for (int s = 0; s < 3; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s);
    x = ad::relu(ad::conv2d(x, size, size, b(prefix + ".conv0.weight"), b(prefix + ".conv0.bias"),
                            3, 2, 1));
    size = ad::conv_out_size(size, 3, 2, 1);
    x = ad::relu(ad::conv2d(x, size, size, b(prefix + ".conv1.weight"), b(prefix + ".conv1.bias"),
                            3, 1, 1));
    stage_out.push_back(x);
  }

  // Multi-scale tokens with positional encodings.
  std::vector<Var> level_tokens;
  for (int l = 0; l < c.num_levels; ++l) {
    const std::string prefix = "input_proj.level" + std::to_string(l);
    level_tokens.push_back(
        ad::linear(stage_out[layout.stages[l]], b(prefix + ".weight"), b(prefix + ".bias")));
  }
  Var memory = level_tokens.size() == 1 ? level_tokens[0] : ad::concat_rows(level_tokens);
  std::vector<double> xs, ys;
  std::vector<int> level_of;
  token_centres(layout, xs, ys, level_of);
  const Var level_embed = b("level_embed");
  std::vector<int> level_rows(level_of.begin(), level_of.end());
  const Var pos = ad::add(tape.constant(sine_encoding_2d(xs, ys, d)),
                          ad::gather_rows(level_embed, level_rows));

  Matrix token_ref(layout.tokens, 2);
  for (int n = 0; n < layout.tokens; ++n) {
    token_ref(n, 0) = xs[n];
    token_ref(n, 1) = ys[n];
  }
  const Var token_ref_var = tape.constant(token_ref);

  // Encoder.
  for (int i = 0; i < c.encoder_blocks; ++i) {
    const std::string prefix = block_path("encoder", i);
    const Var q = ad::add(memory, pos);
    Var attn;
    if (c.deformable()) {
      attn = deformable_attention(q, token_ref_var, memory, layout.shapes,
                                  deformable_weights_of(b, prefix + ".mhsa"), heads,
                                  c.sampling_points);
    } else {
      attn = standard_attention(q, q, memory, standard_weights(b, prefix + ".mhsa"), heads);
    }
    memory = norm(b, ad::add(memory, attn), prefix + ".norm1");
    memory = norm(b, ad::add(memory, ffn(b, memory, prefix + ".ffn")), prefix + ".norm2");
  }

  ModelOutput out;
  const int nq = c.num_queries;
  Var tgt;
  Var query_pos;
  Var reference;     // Nq x 2 sampling anchor for deformable cross-attention
  Var box_prev;      // Nq x 4 previous-box state (may carry gradient)
  Var box_detached;  // dino: detached anchors driving the next block
  if (c.variant == Variant::DetrMini) {
    tgt = tape.constant(Matrix::Zero(nq, d));
    query_pos = b(content_query_path());
    box_prev = tape.constant(Matrix::Constant(nq, 4, 0.5));
  } else if (c.variant == Variant::DdetrMini) {
    tgt = b(content_query_path());
    query_pos = b("decoder.query.positional");
    reference = ad::sigmoid(ad::linear(query_pos, b("decoder.reference_point_head.W"),
                                       b("decoder.reference_point_head.b")));
    box_prev = ad::concat_cols(
        std::vector<Var>{reference, tape.constant(Matrix::Constant(nq, 2, 0.5))});
  } else {
    // Mixed query selection: encoder tokens ranked by best foreground score become
    // anchors; content comes from the static table.
    const Var enc = norm(b,
                         ad::linear(memory, b("encoder_output.proj.W"), b("encoder_output.proj.b")),
                         "encoder_output.norm");
    const Var enc_logits = class_logits(b, enc, "encoder_output");
    Matrix proposals(layout.tokens, 4);
    for (int n = 0; n < layout.tokens; ++n) {
      const double wh = 0.05 * std::pow(2.0, level_of[n]);
      proposals.row(n) << xs[n], ys[n], wh, wh;
    }
    const Var enc_boxes = decoder_refine(tape.constant(proposals),
                                         box_delta(b, enc, "encoder_output"), false);
    const Matrix& lg = enc_logits.value();
    std::vector<double> score(layout.tokens);
    for (int n = 0; n < layout.tokens; ++n) {
      const auto row = lg.row(n);
      // Softmax is monotone per row, so compare foreground probabilities directly.
      const double m = row.maxCoeff();
      const double z = (row.array() - m).exp().sum();
      score[n] = std::exp(row.head(c.num_classes).maxCoeff() - m) / z;
    }
    std::vector<int> order(layout.tokens);
    for (int n = 0; n < layout.tokens; ++n) order[n] = n;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int bb) { return score[a] > score[bb]; });
    order.resize(nq);
    out.encoder_proposals =
        HeadOutput{ad::gather_rows(enc_logits, order), ad::gather_rows(enc_boxes, order)};
    box_detached = ad::detach(out.encoder_proposals->boxes);
    box_prev = box_detached;
    tgt = b(content_query_path());
  }

  for (int i = 0; i < c.decoder_blocks; ++i) {
    const std::string prefix = block_path("decoder", i);
    if (c.variant == Variant::DinoMini) {
      const Var sine = tape.constant(sine_encoding(box_detached.value(), d / 2));
      const Var h = ad::relu(
          ad::linear(sine, b("decoder.query_pos_head.W1"), b("decoder.query_pos_head.b1")));
      query_pos = ad::linear(h, b("decoder.query_pos_head.W2"), b("decoder.query_pos_head.b2"));
      reference = ad::slice_cols(box_detached, 0, 2);
    }
    const Var q = ad::add(tgt, query_pos);
    tgt = norm(b, ad::add(tgt, standard_attention(q, q, tgt, standard_weights(b, prefix + ".mhsa"),
                                                  heads)),
               prefix + ".norm1");
    const Var cq = ad::add(tgt, query_pos);
    Var cross;
    if (c.deformable()) {
      cross = deformable_attention(cq, reference, memory, layout.shapes,
                                   deformable_weights_of(b, prefix + ".mhca"), heads,
                                   c.sampling_points);
    } else {
      cross = standard_attention(cq, ad::add(memory, pos), memory,
                                 standard_weights(b, prefix + ".mhca"), heads);
    }
    tgt = norm(b, ad::add(tgt, cross), prefix + ".norm2");
    tgt = norm(b, ad::add(tgt, ffn(b, tgt, prefix + ".ffn")), prefix + ".norm3");

    const Var delta = box_delta(b, tgt, prefix);
    out.box_inputs.push_back(box_prev);
    out.box_deltas.push_back(delta);
    if (c.variant == Variant::DinoMini) {
      const Var boxes = decoder_refine(box_prev, delta, c.look_forward_twice);
      out.blocks.push_back({class_logits(b, tgt, prefix), boxes});
      // Next block: anchors refined by this block only, gradient one step back.
      box_prev = decoder_refine(box_detached, delta, false);
      box_detached = ad::detach(box_prev);
    } else {
      out.blocks.push_back({class_logits(b, tgt, prefix), decoder_refine(box_prev, delta, true)});
    }
  }
  return out;
}

std::vector<Detection> decode_head(const Matrix& logits, const Matrix& boxes) {
  std::vector<Detection> dets;
  dets.reserve(static_cast<std::size_t>(logits.rows()));
  for (Index q = 0; q < logits.rows(); ++q) {
    const auto row = logits.row(q);
    const double m = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - m).exp();
    e /= e.sum();
    Detection det;
    det.class_probs.assign(e.data(), e.data() + e.size());
    det.box = Box::cxcywh(boxes(q, 0), boxes(q, 1), boxes(q, 2), boxes(q, 3));
    dets.push_back(std::move(det));
  }
  return dets;
}

Prediction Model::predict(const GrayImage& image) const {
  ad::Tape tape(false);
  ParameterBinding binding(tape, params_);
  const ModelOutput out = forward(binding, image);
  Prediction pred;
  for (const auto& block : out.blocks) {
    pred.per_block.push_back(decode_head(block.logits.value(), block.boxes.value()));
  }
  pred.detections = pred.per_block.back();
  return pred;
}

}  // namespace dettoy
