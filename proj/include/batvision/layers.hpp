#pragma once

#include <Eigen/Core>
#include <random>
#include <string>
#include <vector>

#include "batvision/kernels.hpp"
#include "batvision/tensor.hpp"

namespace bv {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

// Non-trainable state saved alongside parameters (spectral-norm vectors).
struct Buffer {
  std::string name;
  Tensor* tensor;
};

struct SpectralNormResult {
  Eigen::MatrixXd normalized;
  double sigma = 0.0;
};

// W / sigma with sigma = u^T W v estimated by n_iter power iterations
// (v <- normalize(W^T u), u <- normalize(W v)). u and v are updated in place;
// an empty v is initialized from u.
SpectralNormResult spectral_normalize(const Eigen::MatrixXd& w, Eigen::VectorXd& u, Eigen::VectorXd& v, int n_iter);

// PyTorch-style uniform initialization with bound 1/sqrt(fan_in), times `scale`.
void init_uniform(Tensor& t, std::int64_t fan_in, std::mt19937_64& rng, double scale = 1.0);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::int64_t in_channels, std::int64_t out_channels, ConvGeom geom,
         bool spectral_norm = false);

  void init(std::mt19937_64& rng, double scale = 1.0);

  // Caches the input for the next backward call.
  Tensor forward(const Tensor& x);
  // Accumulates into weight.grad and bias.grad; returns the input gradient.
  Tensor backward(const Tensor& grad_out, bool need_input_grad = true);

  void power_iteration(int n_iter);
  // Largest-singular-value estimate u^T W v from the stored vectors.
  double sigma() const;
  // The weight actually used by forward: W / sigma with spectral norm, else W.
  Tensor effective_weight() const;

  void collect(std::vector<Parameter*>& out);
  void collect_buffers(std::vector<Buffer>& out);

  std::int64_t in_channels() const { return in_; }
  std::int64_t out_channels() const { return out_; }
  const ConvGeom& geom() const { return geom_; }
  bool spectral_norm() const { return spectral_norm_; }

  Parameter weight;
  Parameter bias;
  Tensor sn_u;  // (out)
  Tensor sn_v;  // (in * kh * kw)

 private:
  std::int64_t in_ = 0, out_ = 0;
  ConvGeom geom_;
  bool spectral_norm_ = false;
  Tensor input_;
  Tensor w_used_;
  double sigma_used_ = 1.0;
};

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::int64_t in_features, std::int64_t out_features);

  void init(std::mt19937_64& rng, double scale = 1.0);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect(std::vector<Parameter*>& out);

  Parameter weight;
  Parameter bias;

 private:
  Tensor input_;
};

inline constexpr double kLeakySlope = 0.2;

Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope);
// Uses the activation output, whose sign matches the input for slope > 0.
Tensor leaky_relu_backward(const Tensor& y, const Tensor& grad_out, double slope = kLeakySlope);
Tensor sigmoid(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);

// (N, C1, H, W) ++ (N, C2, H, W) along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& t, std::int64_t begin, std::int64_t count);
void add_inplace(Tensor& a, const Tensor& b, double scale = 1.0);

}  // namespace bv
