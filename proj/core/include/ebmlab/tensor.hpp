#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ebmlab/error.hpp"

namespace ebmlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major float64 array with an optional gradient slot of the same
// length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  // Allocates a zeroed gradient slot if none exists.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad() noexcept { grad_.reset(); }

  // Same data viewed under a new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

// Stacks same-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
// Row `index` of the leading axis as its own tensor.
Tensor unstack_row(const Tensor& batch, std::size_t index);

}  // namespace ebmlab
