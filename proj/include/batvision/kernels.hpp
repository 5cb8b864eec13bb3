#pragma once

#include <cstdint>

#include "batvision/tensor.hpp"

namespace bv {

// Convolution geometry. One-dimensional convolutions are the kh = 1, sh = 1,
// ph = 0 case on (N, C, 1, L) views.
struct ConvGeom {
  int kh = 3, kw = 3;
  int sh = 1, sw = 1;
  int ph = 1, pw = 1;

  std::int64_t out_h(std::int64_t h) const { return (h + 2 * ph - kh) / sh + 1; }
  std::int64_t out_w(std::int64_t w) const { return (w + 2 * pw - kw) / sw + 1; }
};

struct ConvGrads {
  Tensor input;   // (N, C, H, W)
  Tensor weight;  // (O, C, kh, kw)
  Tensor bias;    // (O)
};

struct LinearGrads {
  Tensor input;   // (N, in)
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
};

// im2col + GEMM, parallel over the batch. Weight and bias gradients are
// summed over samples in index order, so results do not depend on the
// number of threads.
namespace kernels {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeom& g);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const ConvGeom& g,
                          bool need_input_grad = true);

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& grad_out);

}  // namespace kernels

// Direct loop implementations of the same operations, serial.
namespace reference {

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeom& g);
ConvGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out, const ConvGeom& g,
                          bool need_input_grad = true);

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out);

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& grad_out);

}  // namespace reference

// Checks operand shapes and returns the output shape (N, O, Ho, Wo).
Shape conv2d_output_shape(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvGeom& g);

}  // namespace bv
