#pragma once

#include <cstdint>
#include <vector>

#include "batvision/layers.hpp"

namespace bv {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction, in PyTorch's arithmetic order.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void step();
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  const std::vector<Parameter*>& parameters() const { return params_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace bv
