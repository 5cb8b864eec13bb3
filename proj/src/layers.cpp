#include "batvision/layers.hpp"

#include <cmath>

namespace bv {

namespace {

Eigen::VectorXd safe_normalize(const Eigen::VectorXd& x) { return x / std::max(x.norm(), 1e-12); }

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

SpectralNormResult spectral_normalize(const Eigen::MatrixXd& w, Eigen::VectorXd& u, Eigen::VectorXd& v, int n_iter) {
  if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) throw std::invalid_argument("spectral_normalize: zero weight matrix");
  if (u.size() != w.rows()) throw std::invalid_argument("spectral_normalize: u has wrong length");
  if (u.norm() == 0.0) throw std::invalid_argument("spectral_normalize: zero u vector");
  if (n_iter < 0) throw std::invalid_argument("spectral_normalize: negative iteration count");
  if (v.size() == 0) v = safe_normalize(w.transpose() * u);
  if (v.size() != w.cols()) throw std::invalid_argument("spectral_normalize: v has wrong length");
  for (int i = 0; i < n_iter; ++i) {
    v = safe_normalize(w.transpose() * u);
    u = safe_normalize(w * v);
  }
  const double sigma = u.dot(w * v);
  if (!(sigma > 0.0)) throw std::runtime_error("spectral_normalize: non-positive singular value estimate");
  return {w / sigma, sigma};
}

void init_uniform(Tensor& t, std::int64_t fan_in, std::mt19937_64& rng, double scale) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : t.storage()) x = scale * dist(rng);
}

Conv2d::Conv2d(const std::string& name, std::int64_t in_channels, std::int64_t out_channels, ConvGeom geom,
               bool spectral_norm)
    : in_(in_channels), out_(out_channels), geom_(geom), spectral_norm_(spectral_norm) {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument(name + ": channel counts must be positive");
  weight = {name + ".weight", Tensor({out_channels, in_channels, geom.kh, geom.kw}),
            Tensor({out_channels, in_channels, geom.kh, geom.kw})};
  bias = {name + ".bias", Tensor({out_channels}), Tensor({out_channels})};
  if (spectral_norm) {
    sn_u = Tensor({out_channels});
    sn_v = Tensor({in_channels * geom.kh * geom.kw});
  }
}

void Conv2d::init(std::mt19937_64& rng, double scale) {
  const std::int64_t fan_in = in_ * geom_.kh * geom_.kw;
  init_uniform(weight.value, fan_in, rng, scale);
  init_uniform(bias.value, fan_in, rng, scale);
  if (spectral_norm_) {
    std::normal_distribution<double> normal;
    for (auto& x : sn_u.storage()) x = normal(rng);
    for (auto& x : sn_v.storage()) x = normal(rng);
    Eigen::Map<Eigen::VectorXd> u(sn_u.data(), out_), v(sn_v.data(), sn_v.size());
    u = safe_normalize(u);
    v = safe_normalize(v);
    power_iteration(15);
  }
}

void Conv2d::power_iteration(int n_iter) {
  if (!spectral_norm_) return;
  const Eigen::MatrixXd w = Eigen::Map<const RowMatrix>(weight.value.data(), out_, sn_v.size());
  Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(sn_u.data(), out_);
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(sn_v.data(), sn_v.size());
  spectral_normalize(w, u, v, n_iter);
  Eigen::Map<Eigen::VectorXd>(sn_u.data(), out_) = u;
  Eigen::Map<Eigen::VectorXd>(sn_v.data(), sn_v.size()) = v;
}

double Conv2d::sigma() const {
  if (!spectral_norm_) return 1.0;
  const Eigen::Map<const RowMatrix> w(weight.value.data(), out_, sn_v.size());
  const Eigen::Map<const Eigen::VectorXd> u(sn_u.data(), out_), v(sn_v.data(), sn_v.size());
  const double s = u.dot(w * v);
  if (!(s > 0.0)) throw std::runtime_error(weight.name + ": non-positive spectral norm estimate");
  return s;
}

Tensor Conv2d::effective_weight() const {
  if (!spectral_norm_) return weight.value;
  Tensor w = weight.value;
  const double s = sigma();
  for (auto& x : w.storage()) x /= s;
  return w;
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != in_) {
    throw std::invalid_argument(weight.name + ": expected input with " + std::to_string(in_) + " channels, got " +
                                shape_string(x.shape()));
  }
  input_ = x;
  if (spectral_norm_) {
    sigma_used_ = sigma();
    w_used_ = effective_weight();
    return kernels::conv2d_forward(x, w_used_, bias.value, geom_);
  }
  return kernels::conv2d_forward(x, weight.value, bias.value, geom_);
}

Tensor Conv2d::backward(const Tensor& grad_out, bool need_input_grad) {
  if (input_.empty()) throw std::logic_error(weight.name + ": backward without forward");
  const Tensor& w = spectral_norm_ ? w_used_ : weight.value;
  ConvGrads g = kernels::conv2d_backward(input_, w, grad_out, geom_, need_input_grad);
  if (spectral_norm_) {
    // d(W/sigma)/dW with u, v held fixed.
    const std::int64_t K = sn_v.size();
    double inner = 0.0;
    for (std::size_t i = 0; i < g.weight.size(); ++i) inner += g.weight[i] * w_used_[i];
    for (std::int64_t o = 0; o < out_; ++o) {
      for (std::int64_t k = 0; k < K; ++k) {
        const std::size_t i = o * K + k;
        g.weight[i] = (g.weight[i] - inner * sn_u[o] * sn_v[k]) / sigma_used_;
      }
    }
  }
  add_inplace(weight.grad, g.weight);
  add_inplace(bias.grad, g.bias);
  return g.input;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void Conv2d::collect_buffers(std::vector<Buffer>& out) {
  if (!spectral_norm_) return;
  const std::string base = weight.name.substr(0, weight.name.size() - std::string(".weight").size());
  out.push_back({base + ".sn_u", &sn_u});
  out.push_back({base + ".sn_v", &sn_v});
}

Linear::Linear(const std::string& name, std::int64_t in_features, std::int64_t out_features) {
  if (in_features < 1 || out_features < 1) throw std::invalid_argument(name + ": feature counts must be positive");
  weight = {name + ".weight", Tensor({out_features, in_features}), Tensor({out_features, in_features})};
  bias = {name + ".bias", Tensor({out_features}), Tensor({out_features})};
}

void Linear::init(std::mt19937_64& rng, double scale) {
  init_uniform(weight.value, weight.value.dim(1), rng, scale);
  init_uniform(bias.value, weight.value.dim(1), rng, scale);
}

Tensor Linear::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != weight.value.dim(1)) {
    throw std::invalid_argument(weight.name + ": expected (N, " + std::to_string(weight.value.dim(1)) + ") input, got " +
                                shape_string(x.shape()));
  }
  input_ = x;
  return kernels::linear_forward(x, weight.value, bias.value);
}

Tensor Linear::backward(const Tensor& grad_out) {
  if (input_.empty()) throw std::logic_error(weight.name + ": backward without forward");
  LinearGrads g = kernels::linear_backward(input_, weight.value, grad_out);
  add_inplace(weight.grad, g.weight);
  add_inplace(bias.grad, g.bias);
  return g.input;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor y = x;
  for (auto& v : y.storage()) v = v > 0.0 ? v : slope * v;
  return y;
}

Tensor leaky_relu_backward(const Tensor& y, const Tensor& grad_out, double slope) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(y[i] > 0.0)) g[i] *= slope;
  }
  return g;
}

Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.storage()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_string(a.shape()) + " and " +
                                shape_string(b.shape()));
  }
  const std::int64_t N = a.dim(0), HW = a.dim(2) * a.dim(3);
  const std::int64_t sa = a.dim(1) * HW, sb = b.dim(1) * HW;
  Tensor out({N, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy(a.sample(n), a.sample(n) + sa, out.sample(n));
    std::copy(b.sample(n), b.sample(n) + sb, out.sample(n) + sa);
  }
  return out;
}

Tensor slice_channels(const Tensor& t, std::int64_t begin, std::int64_t count) {
  if (t.rank() != 4 || begin < 0 || count < 0 || begin + count > t.dim(1)) {
    throw std::invalid_argument("slice_channels: bad range for " + shape_string(t.shape()));
  }
  const std::int64_t N = t.dim(0), HW = t.dim(2) * t.dim(3);
  Tensor out({N, count, t.dim(2), t.dim(3)});
  for (std::int64_t n = 0; n < N; ++n) {
    std::copy(t.sample(n) + begin * HW, t.sample(n) + (begin + count) * HW, out.sample(n));
  }
  return out;
}

void add_inplace(Tensor& a, const Tensor& b, double scale) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

}  // namespace bv
