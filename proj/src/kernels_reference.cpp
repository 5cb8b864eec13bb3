#include "batvision/kernels.hpp"

namespace bv::reference {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeom& g) {
  const Shape out_shape = conv2d_output_shape(x, weight, bias, g);
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = out_shape[1], Ho = out_shape[2], Wo = out_shape[3];
  Tensor y(out_shape);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          double acc = bias[o];
          for (std::int64_t c = 0; c < C; ++c)
            for (int i = 0; i < g.kh; ++i)
              for (int j = 0; j < g.kw; ++j) {
                const std::int64_t yy = oy * g.sh - g.ph + i, xx = ox * g.sw - g.pw + j;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                acc += weight[((o * C + c) * g.kh + i) * g.kw + j] * x[((n * C + c) * H + yy) * W + xx];
              }
          y[((n * O + o) * Ho + oy) * Wo + ox] = acc;
        }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const ConvGeom& g,
                          bool need_input_grad) {
  const Shape out_shape = conv2d_output_shape(x, weight, Tensor({weight.dim(0)}), g);
  expect_shape(grad_out, out_shape, "conv2d output gradient");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t O = out_shape[1], Ho = out_shape[2], Wo = out_shape[3];
  ConvGrads grads;
  if (need_input_grad) grads.input = Tensor(x.shape());
  grads.weight = Tensor(weight.shape());
  grads.bias = Tensor({O});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          const double go = grad_out[((n * O + o) * Ho + oy) * Wo + ox];
          grads.bias[o] += go;
          for (std::int64_t c = 0; c < C; ++c)
            for (int i = 0; i < g.kh; ++i)
              for (int j = 0; j < g.kw; ++j) {
                const std::int64_t yy = oy * g.sh - g.ph + i, xx = ox * g.sw - g.pw + j;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                const std::size_t wi = ((o * C + c) * g.kh + i) * g.kw + j;
                const std::size_t xi = ((n * C + c) * H + yy) * W + xx;
                grads.weight[wi] += go * x[xi];
                if (need_input_grad) grads.input[xi] += go * weight[wi];
              }
        }
  return grads;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  expect_shape(weight, {weight.dim(0), x.dim(1)}, "linear weight");
  expect_shape(bias, {weight.dim(0)}, "linear bias");
  const std::int64_t N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  Tensor y({N, O});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o) {
      double acc = bias[o];
      for (std::int64_t i = 0; i < I; ++i) acc += weight[o * I + i] * x[n * I + i];
      y[n * O + o] = acc;
    }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out) {
  const std::int64_t N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  expect_shape(grad_out, {N, O}, "linear output gradient");
  LinearGrads grads{Tensor({N, I}), Tensor({O, I}), Tensor({O})};
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < O; ++o) {
      const double go = grad_out[n * O + o];
      grads.bias[o] += go;
      for (std::int64_t i = 0; i < I; ++i) {
        grads.weight[o * I + i] += go * x[n * I + i];
        grads.input[n * I + i] += go * weight[o * I + i];
      }
    }
  return grads;
}

Tensor upsample_nearest2x(const Tensor& x) {
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y({N, C, 2 * H, 2 * W});
  for (std::int64_t p = 0; p < N * C; ++p)
    for (std::int64_t i = 0; i < 2 * H; ++i)
      for (std::int64_t j = 0; j < 2 * W; ++j) y[(p * 2 * H + i) * 2 * W + j] = x[(p * H + i / 2) * W + j / 2];
  return y;
}

Tensor upsample_nearest2x_backward(const Tensor& grad_out) {
  const std::int64_t N = grad_out.dim(0), C = grad_out.dim(1), H = grad_out.dim(2) / 2, W = grad_out.dim(3) / 2;
  Tensor gx({N, C, H, W});
  for (std::int64_t p = 0; p < N * C; ++p)
    for (std::int64_t i = 0; i < 2 * H; ++i)
      for (std::int64_t j = 0; j < 2 * W; ++j) gx[(p * H + i / 2) * W + j / 2] += grad_out[(p * 2 * H + i) * 2 * W + j];
  return gx;
}

}  // namespace bv::reference
