#pragma once

#include <span>
#include <vector>

#include "dettoy/autograd.hpp"

namespace dettoy::ad {

// Dense algebra
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// Adds a 1 x cols row to every row of `a`.
Var add_row(Var a, Var row);
/// x * W + b
Var linear(Var x, Var weight, Var bias);

// Elementwise nonlinearities
Var relu(Var a);
Var sigmoid(Var a);
Var abs(Var a);
/// log(x / (1 - x)) with x clamped to [eps, 1 - eps]; no gradient through the clamp.
Var inverse_sigmoid(Var a, double eps = 1e-6);

// Row-wise
Var softmax_rows(Var a);
/// Softmax over consecutive column groups of `group` entries.
Var softmax_groups(Var a, Index group);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

// Reductions
Var sum(Var a);

// Shape
Var slice_cols(Var a, Index start, Index count);
Var slice_rows(Var a, Index start, Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::vector<int> rows);
/// Same value, no gradient flows back.
Var detach(Var a);

// Fused losses

/// Sum_i w_i * NLL_i / Sum_i w_i over rows of `logits`. Returns 1x1.
Var weighted_cross_entropy(Var logits, std::span<const int> targets,
                           std::span<const double> weights);

/// Per-row 1 - gIoU between predicted and target (cx, cy, w, h) boxes; N x 1.
/// Gradient flows only into `pred`.
Var giou_loss(Var pred, const Matrix& target);

// Convolution

/// 2D convolution. `input` is (H*W) x Cin with row index y*W + x; `weight` is
/// (k*k*Cin) x Cout ordered (ky, kx, cin). Output is (Ho*Wo) x Cout.
Var conv2d(Var input, int height, int width, Var weight, Var bias, int kernel, int stride,
           int padding);

inline int conv_out_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// Deformable sampling

struct LevelShape {
  int height = 0;
  int width = 0;
  int start = 0;  ///< first row of this level in the flattened value matrix
};

/// Bilinear sample of one value channel block at a normalized location. Pixel
/// centers sit at (i + 0.5) / size; locations outside clamp to the border.
double bilinear_sample(const Matrix& value, const LevelShape& level, Index column, double x,
                       double y);

/// Multi-scale deformable aggregation. `value` is (sum H*W) x d; `locations` is
/// Nq x (heads*L*K*2) holding normalized (x, y) pairs; `weights` is Nq x (heads*L*K)
/// and already normalized per head. Output Nq x d, head h owning columns
/// [h*d/heads, (h+1)*d/heads).
Var deformable_sample(Var value, std::span<const LevelShape> levels, Var locations, Var weights,
                      int heads, int points);

}  // namespace dettoy::ad
