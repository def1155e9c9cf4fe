#include "ebmlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ebmlab {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_extents(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) {
      throw Error("tensor-core", "zero extent in shape " + shape_to_string(shape));
    }
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw Error("tensor-core", "shape " + shape_to_string(shape_) + " holds " +
                                   std::to_string(shape_size(shape_)) + " elements, got " +
                                   std::to_string(data_.size()));
  }
}

std::span<double> Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw Error("tensor-core", "tensor has no gradient slot");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  } else {
    grad_.emplace(data_.size(), 0.0);
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw Error("tensor-core", "cannot stack an empty list");
  const Shape& inner = items.front().shape();
  Shape shape{items.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const auto& t : items) {
    if (t.shape() != inner) {
      throw Error("tensor-core", "stack: shape " + shape_to_string(t.shape()) +
                                     " differs from " + shape_to_string(inner));
    }
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor unstack_row(const Tensor& batch, std::size_t index) {
  if (batch.rank() < 2 || index >= batch.dim(0)) {
    throw Error("tensor-core", "unstack_row: index out of range");
  }
  Shape inner(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = shape_size(inner);
  auto first = batch.values().begin() + static_cast<std::ptrdiff_t>(index * n);
  return Tensor(std::move(inner), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(n)));
}

}  // namespace ebmlab
