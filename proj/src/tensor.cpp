#include "akmnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace akmnet::nn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(std::string primitive, const Shape& lhs, const Shape& rhs)
    : std::invalid_argument(primitive + ": shape mismatch " + shape_str(lhs) + " vs " +
                            shape_str(rhs)),
      primitive_(std::move(primitive)),
      lhs_(lhs),
      rhs_(rhs) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (auto extent : shape_) {
    if (extent == 0) throw std::invalid_argument("tensor: zero extent in " + shape_str(shape_));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor: " + std::to_string(data_.size()) +
                                " values do not fill shape " + shape_str(shape_));
  }
  for (auto extent : shape_) {
    if (extent == 0) throw std::invalid_argument("tensor: zero extent in " + shape_str(shape_));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("tensor: item() on shape " + shape_str(shape_));
  }
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) throw ShapeError("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::slice_leading(std::size_t first, std::size_t count) const {
  if (shape_.empty() || count == 0 || first + count > shape_[0]) {
    throw std::out_of_range("tensor: leading slice [" + std::to_string(first) + ", +" +
                            std::to_string(count) + ") of " + shape_str(shape_));
  }
  const std::size_t stride = data_.size() / shape_[0];
  Shape shape = shape_;
  shape[0] = count;
  std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(first * stride),
                     data_.begin() + static_cast<std::ptrdiff_t>((first + count) * stride));
  return Tensor(std::move(shape), std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;

}  // namespace akmnet::nn
