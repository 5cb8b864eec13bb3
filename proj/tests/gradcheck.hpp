#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "batvision/layers.hpp"

namespace bv::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

// Redraws weights with unit-variance pre-activations and biases of order one,
// keeping activations away from the LeakyReLU kink relative to the step size.
inline void randomize_parameters(const std::vector<Parameter*>& params, std::mt19937_64& rng) {
  for (auto* p : params) {
    const bool is_bias = p->value.rank() == 1;
    const double fan_in = is_bias ? 1.0 : static_cast<double>(p->value.size() / p->value.dim(0));
    std::normal_distribution<double> dist(0.0, is_bias ? 0.5 : 1.0 / std::sqrt(fan_in));
    for (auto& v : p->value.storage()) v = dist(rng);
  }
}

struct GradCheckResult {
  double max_rel_error = 0.0;  // norm-wise, worst over the checked tensors
  int checked = 0;
};

// Compares analytic gradients of L = sum(probe * f(x)) against central
// differences with step h on up to `per_tensor` random coordinates of the input
// and of each parameter. `backward` receives dL/df and must return dL/dx after
// accumulating parameter gradients.
inline GradCheckResult check_gradients(const std::function<Tensor(const Tensor&)>& forward,
                                       const std::function<Tensor(const Tensor&)>& backward, Tensor x,
                                       const std::vector<Parameter*>& params, std::uint64_t seed,
                                       int per_tensor = 12, double h = 1e-4, bool check_input = true) {
  std::mt19937_64 rng(seed);
  const Tensor y0 = forward(x);
  const Tensor probe = random_tensor(y0.shape(), rng);
  for (auto* p : params) p->zero_grad();
  forward(x);
  const Tensor gx = backward(probe);
  auto objective = [&](const Tensor& in) {
    const Tensor y = forward(in);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += probe[i] * y[i];
    return s;
  };

  GradCheckResult result;
  auto compare = [&](Tensor& target, const Tensor& analytic) {
    std::uniform_int_distribution<std::size_t> pick(0, target.size() - 1);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (int k = 0; k < per_tensor; ++k) {
      const std::size_t i = pick(rng);
      const double orig = target[i];
      target[i] = orig + h;
      const double fp = objective(x);
      target[i] = orig - h;
      const double fm = objective(x);
      target[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(std::max(a2, n2)), 1e-10);
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff2) / scale);
    ++result.checked;
  };
  if (check_input) compare(x, gx);
  for (auto* p : params) {
    const Tensor analytic = p->grad;
    compare(p->value, analytic);
  }
  return result;
}

}  // namespace bv::testing
