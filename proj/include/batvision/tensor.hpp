#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bv {

using Shape = std::vector<std::int64_t>;

// 64-byte aligned allocation for tensor storage.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_string(const Shape& shape);

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

// Dense row-major array of doubles. NCHW for images, NCL for sequences.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}
  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_size();
  }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the start of sample n along the leading axis.
  double* sample(std::int64_t n) { return data_.data() + n * (shape_numel(shape_) / shape_[0]); }
  const double* sample(std::int64_t n) const {
    return data_.data() + n * (shape_numel(shape_) / shape_[0]);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != shape_numel(shape_)) {
      throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  void check_size() const {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      throw std::invalid_argument("tensor data size does not match shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  Storage data_;
};

// Throws std::invalid_argument naming `what`, the expected and the actual shape.
void expect_shape(const Tensor& t, const Shape& expected, const std::string& what);

}  // namespace bv
