#pragma once

#include <span>
#include <vector>

#include "dettoy/nn_ops.hpp"

namespace dettoy {

/// Projection tables of a standard multi-head attention layer. W_q/W_k/W_v map
/// d -> d without bias; head j owns columns [j*d_h, (j+1)*d_h).
struct AttentionWeights {
  ad::Var w_q, w_k, w_v, w_o, b_o;
};

/// softmax((X W_q)(Y W_k)^T / sqrt(d_h)) (Z W_v) per head, heads concatenated, then
/// output-projected. Throws InvalidArgument on shape mismatch.
ad::Var standard_attention(ad::Var queries, ad::Var keys, ad::Var values,
                           const AttentionWeights& w, int heads);

/// Deformable attention tables. Only W_v is an ablation target; offset and
/// attention-weight predictors are left intact.
struct DeformableWeights {
  ad::Var w_v, w_o, b_o;
  ad::Var w_offset, b_offset;  ///< d -> heads*L*K*2, offsets in level pixels
  ad::Var w_attn, b_attn;      ///< d -> heads*L*K
};

/// For each query: per head, predict K offsets per level around the reference point,
/// bilinearly sample W_v-projected features there, combine with weights normalized
/// over all L*K samples of the head, concatenate heads and output-project.
/// `reference` is Nq x 2 of normalized (x, y).
ad::Var deformable_attention(ad::Var queries, ad::Var reference, ad::Var features,
                             std::span<const ad::LevelShape> levels,
                             const DeformableWeights& w, int heads, int points);

/// Sampling locations produced inside deformable_attention; exposed for inspection.
ad::Var deformable_locations(ad::Var queries, ad::Var reference,
                             std::span<const ad::LevelShape> levels, const DeformableWeights& w,
                             int heads, int points);

/// Attention weights produced inside deformable_attention (normalized per head).
ad::Var deformable_weights(ad::Var queries, const DeformableWeights& w, int levels, int points);

/// b_aux = sigmoid(delta + logit(b_prev)), b_prev clamped to [1e-6, 1 - 1e-6].
/// Without look-forward-twice, b_prev is treated as a constant.
ad::Var decoder_refine(ad::Var b_prev, ad::Var delta, bool look_forward_twice);

/// 2D sine encoding of normalized (x, y): first d/2 columns from y, last d/2 from x.
ad::Matrix sine_encoding_2d(std::span<const double> xs, std::span<const double> ys, int dim);

/// Sine encoding of each column of an N x C matrix into `dim_per_coord` features.
ad::Matrix sine_encoding(const ad::Matrix& coords, int dim_per_coord);

}  // namespace dettoy
