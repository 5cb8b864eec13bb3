#include "batvision/tensor.hpp"

namespace bv {

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

void expect_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected) {
    throw std::invalid_argument(what + ": expected shape " + shape_string(expected) + ", got " +
                                shape_string(t.shape()));
  }
}

}  // namespace bv
