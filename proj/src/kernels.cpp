#include "batvision/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>

namespace bv {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMatrix>;
using ConstMapRow = Eigen::Map<const RowMatrix>;

Shape conv2d_output_shape(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeom& g) {
  if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be (N, C, H, W), got " + shape_string(x.shape()));
  if (weight.rank() != 4) throw std::invalid_argument("conv2d: weight must be (O, C, kh, kw), got " + shape_string(weight.shape()));
  const std::int64_t O = weight.dim(0);
  expect_shape(weight, {O, x.dim(1), g.kh, g.kw}, "conv2d weight");
  expect_shape(bias, {O}, "conv2d bias");
  const std::int64_t Ho = g.out_h(x.dim(2)), Wo = g.out_w(x.dim(3));
  if (Ho < 1 || Wo < 1) {
    throw std::invalid_argument("conv2d: input " + shape_string(x.shape()) + " too small for the kernel");
  }
  return {x.dim(0), O, Ho, Wo};
}

namespace kernels {

namespace {

// cols is (C*kh*kw, Ho*Wo), row-major.
void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W, const ConvGeom& g, std::int64_t Ho,
            std::int64_t Wo, double* cols) {
  for (std::int64_t c = 0; c < C; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t y = oy * g.sh - g.ph + i;
          double* out = row + oy * Wo;
          if (y < 0 || y >= H) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + y) * W;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t xx = ox * g.sw - g.pw + j;
            out[ox] = (xx >= 0 && xx < W) ? src[xx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, std::int64_t C, std::int64_t H, std::int64_t W, const ConvGeom& g, std::int64_t Ho,
            std::int64_t Wo, double* x) {
  std::fill(x, x + C * H * W, 0.0);
  for (std::int64_t c = 0; c < C; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * Ho * Wo;
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
          const std::int64_t y = oy * g.sh - g.ph + i;
          if (y < 0 || y >= H) continue;
          double* dst = x + (c * H + y) * W;
          const double* in = row + oy * Wo;
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const std::int64_t xx = ox * g.sw - g.pw + j;
            if (xx >= 0 && xx < W) dst[xx] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeom& g) {
  const Shape out_shape = conv2d_output_shape(x, weight, bias, g);
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = out_shape[1], Ho = out_shape[2], Wo = out_shape[3];
  const std::int64_t K = C * g.kh * g.kw, P = Ho * Wo;
  Tensor y(out_shape);
  const ConstMapRow Wm(weight.data(), O, K);
  const Eigen::Map<const Eigen::VectorXd> b(bias.data(), O);
#pragma omp parallel
  {
    RowMatrix cols(K, P);
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
      im2col(x.sample(n), C, H, W, g, Ho, Wo, cols.data());
      MapRow Y(y.sample(n), O, P);
      Y.noalias() = Wm * cols;
      Y.colwise() += b;
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const ConvGeom& g,
                          bool need_input_grad) {
  const Shape out_shape = conv2d_output_shape(x, weight, Tensor({weight.dim(0)}), g);
  expect_shape(grad_out, out_shape, "conv2d output gradient");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = out_shape[1], Ho = out_shape[2], Wo = out_shape[3];
  const std::int64_t K = C * g.kh * g.kw, P = Ho * Wo;

  ConvGrads grads;
  if (need_input_grad) grads.input = Tensor(x.shape());
  grads.weight = Tensor(weight.shape());
  grads.bias = Tensor({O});
  Storage gw_per(static_cast<std::size_t>(N * O * K));
  Storage gb_per(static_cast<std::size_t>(N * O));
  const ConstMapRow Wm(weight.data(), O, K);
#pragma omp parallel
  {
    RowMatrix cols(K, P);
#pragma omp for schedule(static)
    for (std::int64_t n = 0; n < N; ++n) {
      const ConstMapRow G(grad_out.sample(n), O, P);
      im2col(x.sample(n), C, H, W, g, Ho, Wo, cols.data());
      MapRow(gw_per.data() + n * O * K, O, K).noalias() = G * cols.transpose();
      Eigen::Map<Eigen::VectorXd>(gb_per.data() + n * O, O) = G.rowwise().sum();
      if (need_input_grad) {
        cols.noalias() = Wm.transpose() * G;
        col2im(cols.data(), C, H, W, g, Ho, Wo, grads.input.sample(n));
      }
    }
  }
  for (std::int64_t n = 0; n < N; ++n) {
    const double* gw = gw_per.data() + n * O * K;
    for (std::int64_t k = 0; k < O * K; ++k) grads.weight[k] += gw[k];
    const double* gb = gb_per.data() + n * O;
    for (std::int64_t o = 0; o < O; ++o) grads.bias[o] += gb[o];
  }
  return grads;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2) throw std::invalid_argument("linear: expected (N, in) input and (out, in) weight");
  expect_shape(weight, {weight.dim(0), x.dim(1)}, "linear weight");
  expect_shape(bias, {weight.dim(0)}, "linear bias");
  const std::int64_t N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  Tensor y({N, O});
  MapRow(y.data(), N, O).noalias() = ConstMapRow(x.data(), N, I) * ConstMapRow(weight.data(), O, I).transpose();
  MapRow(y.data(), N, O).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), O);
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::int64_t N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  expect_shape(grad_out, {N, O}, "linear output gradient");
  LinearGrads grads{Tensor({N, I}), Tensor({O, I}), Tensor({O})};
  const ConstMapRow G(grad_out.data(), N, O);
  MapRow(grads.input.data(), N, I).noalias() = G * ConstMapRow(weight.data(), O, I);
  MapRow(grads.weight.data(), O, I).noalias() = G.transpose() * ConstMapRow(x.data(), N, I);
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t o = 0; o < O; ++o) grads.bias[o] += G(n, o);
  }
  return grads;
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample: input must be (N, C, H, W), got " + shape_string(x.shape()));
  const std::int64_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({x.dim(0), x.dim(1), 2 * H, 2 * W});
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < NC; ++p) {
    const double* src = x.data() + p * H * W;
    double* dst = y.data() + p * 4 * H * W;
    for (std::int64_t i = 0; i < H; ++i) {
      double* row = dst + 2 * i * 2 * W;
      for (std::int64_t j = 0; j < W; ++j) row[2 * j] = row[2 * j + 1] = src[i * W + j];
      std::copy(row, row + 2 * W, row + 2 * W);
    }
  }
  return y;
}

Tensor upsample_nearest2x_backward(const Tensor& grad_out) {
  if (grad_out.rank() != 4 || grad_out.dim(2) % 2 || grad_out.dim(3) % 2) {
    throw std::invalid_argument("upsample backward: bad gradient shape " + shape_string(grad_out.shape()));
  }
  const std::int64_t NC = grad_out.dim(0) * grad_out.dim(1), H = grad_out.dim(2) / 2, W = grad_out.dim(3) / 2;
  Tensor gx({grad_out.dim(0), grad_out.dim(1), H, W});
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < NC; ++p) {
    const double* src = grad_out.data() + p * 4 * H * W;
    double* dst = gx.data() + p * H * W;
    for (std::int64_t i = 0; i < H; ++i) {
      const double* r0 = src + 2 * i * 2 * W;
      const double* r1 = r0 + 2 * W;
      for (std::int64_t j = 0; j < W; ++j) {
        dst[i * W + j] = (r0[2 * j] + r0[2 * j + 1]) + (r1[2 * j] + r1[2 * j + 1]);
      }
    }
  }
  return gx;
}

}  // namespace kernels
}  // namespace bv
