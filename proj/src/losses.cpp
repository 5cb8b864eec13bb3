#include "batvision/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace bv {

DLoss lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores) {
  expect_shape(fake_scores, real_scores.shape(), "fake scores");
  if (real_scores.empty()) throw std::invalid_argument("lsgan_d_loss: empty score maps");
  const double n = static_cast<double>(real_scores.size());
  DLoss out{0.0, Tensor(real_scores.shape()), Tensor(fake_scores.shape())};
  double sr = 0.0, sf = 0.0;
  for (std::size_t i = 0; i < real_scores.size(); ++i) {
    const double r = real_scores[i] - 1.0, f = fake_scores[i];
    sr += r * r;
    sf += f * f;
    out.grad_real[i] = r / n;
    out.grad_fake[i] = f / n;
  }
  out.value = 0.5 * sr / n + 0.5 * sf / n;
  return out;
}

LossValue lsgan_g_loss(const Tensor& fake_scores) {
  if (fake_scores.empty()) throw std::invalid_argument("lsgan_g_loss: empty score map");
  const double n = static_cast<double>(fake_scores.size());
  LossValue out{0.0, Tensor(fake_scores.shape())};
  double s = 0.0;
  for (std::size_t i = 0; i < fake_scores.size(); ++i) {
    const double f = fake_scores[i] - 1.0;
    s += f * f;
    out.grad[i] = f / n;
  }
  out.value = 0.5 * s / n;
  return out;
}

LossValue masked_l1(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& mask) {
  expect_shape(target, pred.shape(), "l1 target");
  if (mask.size() != pred.size()) throw std::invalid_argument("masked_l1: mask size does not match prediction");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw std::invalid_argument("masked_l1: mask selects no pixels");
  const double n = static_cast<double>(count);
  LossValue out{0.0, Tensor(pred.shape())};
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    const double d = pred[i] - target[i];
    s += std::abs(d);
    out.grad[i] = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) / n;
  }
  out.value = s / n;
  return out;
}

}  // namespace bv
