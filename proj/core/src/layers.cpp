#include "dettoy/layers.hpp"

#include <cmath>
#include <numbers>

#include "dettoy/error.hpp"

namespace dettoy {

using ad::Index;
using ad::Matrix;
using ad::Var;

Var standard_attention(Var queries, Var keys, Var values, const AttentionWeights& w, int heads) {
  const Index d = w.w_q.cols();
  if (heads <= 0 || d % heads != 0) throw InvalidArgument("attention: d must divide into heads");
  if (keys.rows() != values.rows()) {
    throw InvalidArgument("attention: keys and values need the same token count");
  }
  const Var q = ad::matmul(queries, w.w_q);
  const Var k = ad::matmul(keys, w.w_k);
  const Var v = ad::matmul(values, w.w_v);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> per_head;
  per_head.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Var qh = ad::slice_cols(q, h * dh, dh);
    const Var kh = ad::slice_cols(k, h * dh, dh);
    const Var vh = ad::slice_cols(v, h * dh, dh);
    const Var p = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale));
    per_head.push_back(ad::matmul(p, vh));
  }
  return ad::linear(ad::concat_cols(per_head), w.w_o, w.b_o);
}

Var deformable_weights(Var queries, const DeformableWeights& w, int levels, int points) {
  return ad::softmax_groups(ad::linear(queries, w.w_attn, w.b_attn),
                            static_cast<Index>(levels) * points);
}

Var deformable_locations(Var queries, Var reference, std::span<const ad::LevelShape> levels,
                         const DeformableWeights& w, int heads, int points) {
  if (reference.cols() != 2 || reference.rows() != queries.rows()) {
    throw InvalidArgument("deformable attention: reference must be Nq x 2");
  }
  const int num_levels = static_cast<int>(levels.size());
  const Index samples = static_cast<Index>(heads) * num_levels * points;
  const Var offsets = ad::linear(queries, w.w_offset, w.b_offset);
  if (offsets.cols() != 2 * samples) {
    throw InvalidArgument("deformable attention: offset predictor width mismatch");
  }
  ad::Tape& tape = *queries.tape();
  Matrix inv_size(queries.rows(), 2 * samples);
  Matrix spread = Matrix::Zero(2, 2 * samples);
  for (int h = 0; h < heads; ++h) {
    for (int l = 0; l < num_levels; ++l) {
      for (int k = 0; k < points; ++k) {
        const Index s = (static_cast<Index>(h) * num_levels + l) * points + k;
        inv_size.col(2 * s).setConstant(1.0 / levels[l].width);
        inv_size.col(2 * s + 1).setConstant(1.0 / levels[l].height);
        spread(0, 2 * s) = 1.0;
        spread(1, 2 * s + 1) = 1.0;
      }
    }
  }
  const Var base = ad::matmul(reference, tape.constant(std::move(spread)));
  return ad::add(base, ad::mul(offsets, tape.constant(std::move(inv_size))));
}

Var deformable_attention(Var queries, Var reference, Var features,
                         std::span<const ad::LevelShape> levels, const DeformableWeights& w,
                         int heads, int points) {
  const Var value = ad::matmul(features, w.w_v);
  const Var loc = deformable_locations(queries, reference, levels, w, heads, points);
  const Var attn = deformable_weights(queries, w, static_cast<int>(levels.size()), points);
  const Var sampled = ad::deformable_sample(value, levels, loc, attn, heads, points);
  return ad::linear(sampled, w.w_o, w.b_o);
}

Var decoder_refine(Var b_prev, Var delta, bool look_forward_twice) {
  const Var prev = look_forward_twice ? b_prev : ad::detach(b_prev);
  return ad::sigmoid(ad::add(delta, ad::inverse_sigmoid(prev, 1e-6)));
}

namespace {

double sine_feature(double coord, int i, int dim) {
  const double two_pi = 2.0 * std::numbers::pi;
  const double freq = std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(dim));
  const double arg = coord * two_pi / freq;
  return (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
}

}  // namespace

Matrix sine_encoding_2d(std::span<const double> xs, std::span<const double> ys, int dim) {
  if (xs.size() != ys.size()) throw InvalidArgument("sine_encoding_2d: length mismatch");
  const int half = dim / 2;
  Matrix out(static_cast<Index>(xs.size()), dim);
  for (std::size_t n = 0; n < xs.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      out(static_cast<Index>(n), i) = sine_feature(ys[n], i, half);
      out(static_cast<Index>(n), half + i) = sine_feature(xs[n], i, half);
    }
  }
  return out;
}

Matrix sine_encoding(const Matrix& coords, int dim_per_coord) {
  Matrix out(coords.rows(), coords.cols() * dim_per_coord);
  for (Index n = 0; n < coords.rows(); ++n) {
    for (Index c = 0; c < coords.cols(); ++c) {
      for (int i = 0; i < dim_per_coord; ++i) {
        out(n, c * dim_per_coord + i) = sine_feature(coords(n, c), i, dim_per_coord);
      }
    }
  }
  return out;
}

}  // namespace dettoy
