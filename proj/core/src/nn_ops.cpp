#include "dettoy/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "dettoy/error.hpp"

namespace dettoy::ad {

namespace {

std::string shape_of(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " +
                          shape_of(b));
  }
}

Tape& tape_of(const Var& a) { return *a.tape(); }

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw InvalidArgument("matmul: inner dimensions differ, " + shape_of(a) + " * " + shape_of(b));
  }
  Matrix out = a.value() * b.value();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw InvalidArgument("matmul_nt: column counts differ, " + shape_of(a) + " vs " + shape_of(b));
  }
  Matrix out = a.value() * b.value().transpose();
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return tape_of(a).record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return tape_of(a).record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double factor) {
  return tape_of(a).record(a.value() * factor, {a},
                           [a, factor](Tape& t, const Matrix& g) { t.accumulate(a, g * factor); });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw InvalidArgument("add_row: expected a 1x" + std::to_string(a.cols()) + " row, got " +
                          shape_of(row));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return tape_of(a).record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var sigmoid(Var a) {
  auto y = std::make_shared<Matrix>((1.0 / (1.0 + (-a.value().array()).exp())).matrix());
  return tape_of(a).record(Matrix(*y), {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * y->array() * (1.0 - y->array())).matrix());
  });
}

Var abs(Var a) {
  Matrix out = a.value().cwiseAbs();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * a.value().array().sign()).matrix());
  });
}

Var inverse_sigmoid(Var a, double eps) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = std::clamp(x.data()[i], 0.0, 1.0);
    out.data()[i] = std::log(std::max(v, eps) / std::max(1.0 - v, eps));
  }
  return tape_of(a).record(std::move(out), {a}, [a, eps](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      d.data()[i] = (v > eps && v < 1.0 - eps) ? g.data()[i] * (1.0 / v + 1.0 / (1.0 - v)) : 0.0;
    }
    t.accumulate(a, d);
  });
}

namespace {

Matrix softmax_grouped(const Matrix& x, Index group) {
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index c0 = 0; c0 < x.cols(); c0 += group) {
      const auto seg = x.row(r).segment(c0, group);
      const double m = seg.maxCoeff();
      auto out = y.row(r).segment(c0, group);
      out = (seg.array() - m).exp().matrix();
      out /= out.sum();
    }
  }
  return y;
}

Var softmax_impl(Var a, Index group) {
  if (group <= 0 || a.cols() % group != 0) {
    throw InvalidArgument("softmax: group size must divide the column count");
  }
  Matrix y = softmax_grouped(a.value(), group);
  auto y_shared = std::make_shared<Matrix>(y);
  return tape_of(a).record(std::move(y), {a}, [a, y_shared, group](Tape& t, const Matrix& g) {
    const Matrix& y = *y_shared;
    Matrix d(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      for (Index c0 = 0; c0 < y.cols(); c0 += group) {
        const auto ys = y.row(r).segment(c0, group);
        const auto gs = g.row(r).segment(c0, group);
        const double dot = ys.dot(gs);
        d.row(r).segment(c0, group) = (ys.array() * (gs.array() - dot)).matrix();
      }
    }
    t.accumulate(a, d);
  });
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, a.cols()); }

Var softmax_groups(Var a, Index group) { return softmax_impl(a, group); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw InvalidArgument("layer_norm: gamma/beta must be 1x" + std::to_string(n));
  }
  auto xhat = std::make_shared<Matrix>(x.rows(), n);
  auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const auto row = x.value().row(r);
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (row.array() - mean) * (*inv_std)(r);
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  return tape_of(x).record(
      std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g) {
        const Matrix& xh = *xhat;
        if (t.requires_grad(gamma)) t.accumulate(gamma, g.cwiseProduct(xh).colwise().sum());
        if (t.requires_grad(beta)) t.accumulate(beta, g.colwise().sum());
        if (t.requires_grad(x)) {
          const Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
          Matrix dx(xh.rows(), xh.cols());
          for (Index r = 0; r < xh.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).dot(xh.row(r)) / static_cast<double>(xh.cols());
            dx.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - m1 - xh.row(r).array() * m2);
          }
          t.accumulate(x, dx);
        }
      });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw InvalidArgument("slice_cols out of range");
  }
  Matrix out = a.value().middleCols(start, count);
  return tape_of(a).record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleCols(start, count) = g;
    t.accumulate(a, d);
  });
}

Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw InvalidArgument("slice_rows out of range");
  }
  Matrix out = a.value().middleRows(start, count);
  return tape_of(a).record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleRows(start, count) = g;
    t.accumulate(a, d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols of nothing");
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != parts[0].rows()) throw InvalidArgument("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), inputs, [inputs](Tape& t, const Matrix& g) {
    Index c = 0;
    for (const Var& p : inputs) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows of nothing");
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != parts[0].cols()) throw InvalidArgument("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record(std::move(out), inputs, [inputs](Tape& t, const Matrix& g) {
    Index r = 0;
    for (const Var& p : inputs) {
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Var gather_rows(Var a, std::vector<int> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw InvalidArgument("gather_rows index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return tape_of(a).record(std::move(out), {a}, [a, rows = std::move(rows)](Tape& t,
                                                                             const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(rows[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, d);
  });
}

Var detach(Var a) { return tape_of(a).constant(a.value()); }

Var weighted_cross_entropy(Var logits, std::span<const int> targets,
                           std::span<const double> weights) {
  const Index n = logits.rows();
  const Index k = logits.cols();
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(weights.size()) != n) {
    throw InvalidArgument("weighted_cross_entropy: one target and weight per row required");
  }
  auto probs = std::make_shared<Matrix>(softmax_grouped(logits.value(), k));
  double total_weight = 0.0;
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= k) {
      throw InvalidArgument("weighted_cross_entropy: target out of range");
    }
    const auto row = logits.value().row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss += weights[i] * (lse - row(targets[i]));
    total_weight += weights[i];
  }
  if (!(total_weight > 0.0)) throw InvalidArgument("weighted_cross_entropy: zero total weight");
  Matrix out(1, 1);
  out(0, 0) = loss / total_weight;
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return tape_of(logits).record(
      std::move(out), {logits},
      [logits, probs, tgt = std::move(tgt), w = std::move(w), total_weight](Tape& t,
                                                                           const Matrix& g) {
        Matrix d = *probs;
        for (Index i = 0; i < d.rows(); ++i) {
          d(i, tgt[i]) -= 1.0;
          d.row(i) *= w[i] * g(0, 0) / total_weight;
        }
        t.accumulate(logits, d);
      });
}

namespace {

struct GiouParts {
  double loss;
  double grad[4];  // d loss / d (x1, y1, x2, y2) of the prediction
};

GiouParts giou_loss_xyxy(const double p[4], const double q[4]) {
  const double pw = p[2] - p[0], ph = p[3] - p[1];
  const double qw = q[2] - q[0], qh = q[3] - q[1];
  const double area_p = pw * ph;
  const double area_q = qw * qh;
  const double iw = std::min(p[2], q[2]) - std::max(p[0], q[0]);
  const double ih = std::min(p[3], q[3]) - std::max(p[1], q[1]);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = area_p + area_q - inter;
  const double cw = std::max(p[2], q[2]) - std::min(p[0], q[0]);
  const double ch = std::max(p[3], q[3]) - std::min(p[1], q[1]);
  const double enc = cw * ch;

  GiouParts out{};
  if (!(uni > 0.0) || !(enc > 0.0)) {
    out.loss = 1.0;
    return out;
  }
  const double iou = inter / uni;
  out.loss = 2.0 - iou - uni / enc;

  double d_area_p[4] = {-ph, -pw, ph, pw};
  double d_inter[4] = {0, 0, 0, 0};
  if (overlap) {
    d_inter[0] = p[0] > q[0] ? -ih : 0.0;
    d_inter[2] = p[2] < q[2] ? ih : 0.0;
    d_inter[1] = p[1] > q[1] ? -iw : 0.0;
    d_inter[3] = p[3] < q[3] ? iw : 0.0;
  }
  double d_enc[4] = {
      p[0] < q[0] ? -ch : 0.0,
      p[1] < q[1] ? -cw : 0.0,
      p[2] > q[2] ? ch : 0.0,
      p[3] > q[3] ? cw : 0.0,
  };
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area_p[k] - d_inter[k];
    const double d_iou = (d_inter[k] * uni - inter * d_uni) / (uni * uni);
    out.grad[k] = -d_iou - d_uni / enc + uni * d_enc[k] / (enc * enc);
  }
  return out;
}

void to_corners(const double* b, double out[4]) {
  out[0] = b[0] - 0.5 * b[2];
  out[1] = b[1] - 0.5 * b[3];
  out[2] = b[0] + 0.5 * b[2];
  out[3] = b[1] + 0.5 * b[3];
}

}  // namespace

Var giou_loss(Var pred, const Matrix& target) {
  if (pred.cols() != 4 || target.cols() != 4 || pred.rows() != target.rows()) {
    throw InvalidArgument("giou_loss: expected matching N x 4 box matrices");
  }
  const Index n = pred.rows();
  Matrix out(n, 1);
  auto grads = std::make_shared<Matrix>(n, 4);
  for (Index i = 0; i < n; ++i) {
    double p[4], q[4];
    to_corners(pred.value().row(i).data(), p);
    to_corners(target.row(i).data(), q);
    const GiouParts parts = giou_loss_xyxy(p, q);
    out(i, 0) = parts.loss;
    const double* g = parts.grad;
    (*grads)(i, 0) = g[0] + g[2];
    (*grads)(i, 1) = g[1] + g[3];
    (*grads)(i, 2) = 0.5 * (g[2] - g[0]);
    (*grads)(i, 3) = 0.5 * (g[3] - g[1]);
  }
  return tape_of(pred).record(std::move(out), {pred}, [pred, grads](Tape& t, const Matrix& g) {
    t.accumulate(pred, (grads->array().colwise() * g.col(0).array()).matrix());
  });
}

Var conv2d(Var input, int height, int width, Var weight, Var bias, int kernel, int stride,
           int padding) {
  const Index cin = input.cols();
  const Index cout = weight.cols();
  if (input.rows() != static_cast<Index>(height) * width) {
    throw InvalidArgument("conv2d: input rows do not match height*width");
  }
  if (weight.rows() != static_cast<Index>(kernel) * kernel * cin) {
    throw InvalidArgument("conv2d: weight rows must equal kernel*kernel*Cin");
  }
  if (bias.rows() != 1 || bias.cols() != cout) throw InvalidArgument("conv2d: bad bias shape");
  const int ho = conv_out_size(height, kernel, stride, padding);
  const int wo = conv_out_size(width, kernel, stride, padding);
  if (ho <= 0 || wo <= 0) throw InvalidArgument("conv2d: output would be empty");

  auto cols = std::make_shared<Matrix>(Matrix::Zero(static_cast<Index>(ho) * wo,
                                                    static_cast<Index>(kernel) * kernel * cin));
  const Matrix& x = input.value();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const Index r = static_cast<Index>(oy) * wo + ox;
      for (int ky = 0; ky < kernel; ++ky) {
        const int iy = oy * stride - padding + ky;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int ix = ox * stride - padding + kx;
          if (ix < 0 || ix >= width) continue;
          cols->row(r).segment((static_cast<Index>(ky) * kernel + kx) * cin, cin) =
              x.row(static_cast<Index>(iy) * width + ix);
        }
      }
    }
  }
  Matrix out = (*cols) * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape_of(input).record(
      std::move(out), {input, weight, bias},
      [=](Tape& t, const Matrix& g) {
        if (t.requires_grad(weight)) t.accumulate(weight, cols->transpose() * g);
        if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        if (!t.requires_grad(input)) return;
        const Matrix dcols = g * weight.value().transpose();
        Matrix dx = Matrix::Zero(static_cast<Index>(height) * width, cin);
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const Index r = static_cast<Index>(oy) * wo + ox;
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= height) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = ox * stride - padding + kx;
                if (ix < 0 || ix >= width) continue;
                dx.row(static_cast<Index>(iy) * width + ix) +=
                    dcols.row(r).segment((static_cast<Index>(ky) * kernel + kx) * cin, cin);
              }
            }
          }
        }
        t.accumulate(input, dx);
      });
}

namespace {

struct BilinearTap {
  Index rows[4];
  double coef[4];
  // d sample / d x and d y expressed as coefficients on the same four cells.
  double dx_coef[4];
  double dy_coef[4];
};

BilinearTap bilinear_tap(const LevelShape& level, double x, double y) {
  const double px_raw = x * level.width - 0.5;
  const double py_raw = y * level.height - 0.5;
  const double px = std::clamp(px_raw, 0.0, static_cast<double>(level.width - 1));
  const double py = std::clamp(py_raw, 0.0, static_cast<double>(level.height - 1));
  const bool x_free = px_raw > 0.0 && px_raw < level.width - 1;
  const bool y_free = py_raw > 0.0 && py_raw < level.height - 1;
  const int x0 = static_cast<int>(std::floor(px));
  const int y0 = static_cast<int>(std::floor(py));
  const int x1 = std::min(x0 + 1, level.width - 1);
  const int y1 = std::min(y0 + 1, level.height - 1);
  const double fx = px - x0;
  const double fy = py - y0;
  BilinearTap tap;
  tap.rows[0] = level.start + static_cast<Index>(y0) * level.width + x0;
  tap.rows[1] = level.start + static_cast<Index>(y0) * level.width + x1;
  tap.rows[2] = level.start + static_cast<Index>(y1) * level.width + x0;
  tap.rows[3] = level.start + static_cast<Index>(y1) * level.width + x1;
  tap.coef[0] = (1 - fx) * (1 - fy);
  tap.coef[1] = fx * (1 - fy);
  tap.coef[2] = (1 - fx) * fy;
  tap.coef[3] = fx * fy;
  const double sx = x_free ? level.width : 0.0;
  const double sy = y_free ? level.height : 0.0;
  tap.dx_coef[0] = -(1 - fy) * sx;
  tap.dx_coef[1] = (1 - fy) * sx;
  tap.dx_coef[2] = -fy * sx;
  tap.dx_coef[3] = fy * sx;
  tap.dy_coef[0] = -(1 - fx) * sy;
  tap.dy_coef[1] = -fx * sy;
  tap.dy_coef[2] = (1 - fx) * sy;
  tap.dy_coef[3] = fx * sy;
  return tap;
}

}  // namespace

double bilinear_sample(const Matrix& value, const LevelShape& level, Index column, double x,
                       double y) {
  const BilinearTap tap = bilinear_tap(level, x, y);
  double s = 0.0;
  for (int c = 0; c < 4; ++c) s += tap.coef[c] * value(tap.rows[c], column);
  return s;
}

Var deformable_sample(Var value, std::span<const LevelShape> levels, Var locations, Var weights,
                      int heads, int points) {
  const Index d = value.cols();
  const Index nq = locations.rows();
  const int num_levels = static_cast<int>(levels.size());
  if (heads <= 0 || d % heads != 0) throw InvalidArgument("deformable_sample: d % heads != 0");
  const Index samples = static_cast<Index>(heads) * num_levels * points;
  if (locations.cols() != 2 * samples || weights.cols() != samples || weights.rows() != nq) {
    throw InvalidArgument("deformable_sample: location/weight shapes do not match heads*L*K");
  }
  const Index dh = d / heads;
  std::vector<LevelShape> lv(levels.begin(), levels.end());

  Matrix out = Matrix::Zero(nq, d);
  const Matrix& v = value.value();
  const Matrix& loc = locations.value();
  const Matrix& w = weights.value();
  for (Index q = 0; q < nq; ++q) {
    for (int h = 0; h < heads; ++h) {
      auto dst = out.row(q).segment(h * dh, dh);
      for (int l = 0; l < num_levels; ++l) {
        for (int k = 0; k < points; ++k) {
          const Index s = (static_cast<Index>(h) * num_levels + l) * points + k;
          const BilinearTap tap = bilinear_tap(lv[l], loc(q, 2 * s), loc(q, 2 * s + 1));
          for (int c = 0; c < 4; ++c) {
            dst += (w(q, s) * tap.coef[c]) * v.row(tap.rows[c]).segment(h * dh, dh);
          }
        }
      }
    }
  }
  return tape_of(value).record(
      std::move(out), {value, locations, weights},
      [=](Tape& t, const Matrix& g) {
        const Matrix& v = value.value();
        const Matrix& loc = locations.value();
        const Matrix& w = weights.value();
        const bool need_v = t.requires_grad(value);
        const bool need_loc = t.requires_grad(locations);
        const bool need_w = t.requires_grad(weights);
        Matrix dv = need_v ? Matrix::Zero(v.rows(), v.cols()) : Matrix();
        Matrix dloc = need_loc ? Matrix::Zero(loc.rows(), loc.cols()) : Matrix();
        Matrix dw = need_w ? Matrix::Zero(w.rows(), w.cols()) : Matrix();
        for (Index q = 0; q < nq; ++q) {
          for (int h = 0; h < heads; ++h) {
            const auto gq = g.row(q).segment(h * dh, dh);
            for (int l = 0; l < num_levels; ++l) {
              for (int k = 0; k < points; ++k) {
                const Index s = (static_cast<Index>(h) * num_levels + l) * points + k;
                const BilinearTap tap = bilinear_tap(lv[l], loc(q, 2 * s), loc(q, 2 * s + 1));
                double g_sample = 0.0, g_x = 0.0, g_y = 0.0;
                for (int c = 0; c < 4; ++c) {
                  const auto vc = v.row(tap.rows[c]).segment(h * dh, dh);
                  const double dot = gq.dot(vc);
                  g_sample += tap.coef[c] * dot;
                  g_x += tap.dx_coef[c] * dot;
                  g_y += tap.dy_coef[c] * dot;
                  if (need_v) dv.row(tap.rows[c]).segment(h * dh, dh) += (w(q, s) * tap.coef[c]) * gq;
                }
                if (need_w) dw(q, s) += g_sample;
                if (need_loc) {
                  dloc(q, 2 * s) += w(q, s) * g_x;
                  dloc(q, 2 * s + 1) += w(q, s) * g_y;
                }
              }
            }
          }
        }
        if (need_v) t.accumulate(value, dv);
        if (need_loc) t.accumulate(locations, dloc);
        if (need_w) t.accumulate(weights, dw);
      });
}

}  // namespace dettoy::ad
