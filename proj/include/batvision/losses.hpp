#pragma once

#include <cstdint>
#include <vector>

#include "batvision/tensor.hpp"

namespace bv {

struct LossValue {
  double value = 0.0;
  Tensor grad;  // d value / d input
};

struct DLoss {
  double value = 0.0;
  Tensor grad_real;
  Tensor grad_fake;
};

// 1/2 mean((real - 1)^2) + 1/2 mean(fake^2)
DLoss lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores);
// 1/2 mean((fake - 1)^2)
LossValue lsgan_g_loss(const Tensor& fake_scores);
// Mean |pred - target| over pixels whose mask is nonzero.
LossValue masked_l1(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& mask);

}  // namespace bv
