#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "batvision/kernels.hpp"

using namespace bv;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist;
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d matches the reference across geometries") {
  std::mt19937_64 rng(1);
  const std::vector<std::pair<ConvGeom, Shape>> cases = {
      {{3, 3, 1, 1, 1, 1}, {2, 3, 8, 8}},    {{4, 4, 2, 2, 1, 1}, {3, 2, 16, 16}},
      {{4, 4, 1, 1, 1, 1}, {2, 4, 7, 7}},    {{1, 1, 1, 1, 0, 0}, {2, 5, 3, 4}},
      {{1, 8, 1, 4, 0, 2}, {2, 2, 1, 64}},   {{1, 3, 1, 2, 0, 1}, {1, 6, 1, 17}},
  };
  for (const auto& [g, xs] : cases) {
    const std::int64_t O = 3;
    const Tensor x = random_tensor(xs, rng);
    const Tensor w = random_tensor({O, xs[1], g.kh, g.kw}, rng);
    const Tensor b = random_tensor({O}, rng);
    const Tensor y = kernels::conv2d_forward(x, w, b, g);
    const Tensor y_ref = reference::conv2d_forward(x, w, b, g);
    CHECK(y.dim(2) == g.out_h(xs[2]));
    CHECK(max_abs_diff(y, y_ref) < 1e-12);

    const Tensor gy = random_tensor(y.shape(), rng);
    const auto grads = kernels::conv2d_backward(x, w, gy, g);
    const auto ref = reference::conv2d_backward(x, w, gy, g);
    CHECK(max_abs_diff(grads.input, ref.input) < 1e-11);
    CHECK(max_abs_diff(grads.weight, ref.weight) < 1e-11);
    CHECK(max_abs_diff(grads.bias, ref.bias) < 1e-11);
  }
}

TEST_CASE("conv2d input gradient is the adjoint of the forward map") {
  std::mt19937_64 rng(2);
  const ConvGeom g{4, 4, 2, 2, 1, 1};
  const Tensor x = random_tensor({1, 2, 10, 10}, rng);
  const Tensor w = random_tensor({3, 2, 4, 4}, rng);
  const Tensor zero({3});
  const Tensor y = reference::conv2d_forward(x, w, zero, g);
  const Tensor gy = random_tensor(y.shape(), rng);
  const auto grads = kernels::conv2d_backward(x, w, gy, g);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * gy[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * grads.input[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv2d shape errors") {
  const ConvGeom g{3, 3, 1, 1, 1, 1};
  CHECK_THROWS_AS(kernels::conv2d_forward(Tensor({1, 2, 4, 4}), Tensor({3, 1, 3, 3}), Tensor({3}), g),
                  std::invalid_argument);
  CHECK_THROWS_AS(kernels::conv2d_forward(Tensor({1, 2, 4, 4}), Tensor({3, 2, 3, 3}), Tensor({2}), g),
                  std::invalid_argument);
  CHECK_THROWS_AS(kernels::conv2d_forward(Tensor({2, 4, 4}), Tensor({3, 2, 3, 3}), Tensor({3}), g),
                  std::invalid_argument);
  CHECK_THROWS_AS(kernels::conv2d_forward(Tensor({1, 1, 1, 1}), Tensor({1, 1, 4, 4}), Tensor({1}),
                                          ConvGeom{4, 4, 1, 1, 0, 0}),
                  std::invalid_argument);
}

TEST_CASE("linear matches the reference") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({5, 7}, rng);
  const Tensor w = random_tensor({4, 7}, rng);
  const Tensor b = random_tensor({4}, rng);
  CHECK(max_abs_diff(kernels::linear_forward(x, w, b), reference::linear_forward(x, w, b)) < 1e-12);
  const Tensor gy = random_tensor({5, 4}, rng);
  const auto a = kernels::linear_backward(x, w, gy);
  const auto r = reference::linear_backward(x, w, gy);
  CHECK(max_abs_diff(a.input, r.input) < 1e-12);
  CHECK(max_abs_diff(a.weight, r.weight) < 1e-12);
  CHECK(max_abs_diff(a.bias, r.bias) < 1e-12);
}

TEST_CASE("nearest upsample replicates each value in a 2x2 tile") {
  const Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor y = kernels::upsample_nearest2x(x);
  const std::vector<double> expected{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y.to_vector() == expected);
  CHECK(reference::upsample_nearest2x(x).to_vector() == expected);

  std::mt19937_64 rng(4);
  const Tensor g = random_tensor({2, 3, 8, 6}, rng);
  const Tensor gx = kernels::upsample_nearest2x_backward(g);
  CHECK(max_abs_diff(gx, reference::upsample_nearest2x_backward(g)) < 1e-14);
  CHECK(gx[0] == doctest::Approx(g[0] + g[1] + g[6] + g[7]));
}
