#include "posefuse/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "posefuse/error.hpp"

namespace posefuse {

std::string to_string(const Shape3& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

template <typename T>
Grid3<T>::Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeMismatch("grid of shape " + to_string(shape_) + " needs " +
                        std::to_string(shape_.size()) + " values, got " +
                        std::to_string(data_.size()));
  }
}

template class Grid3<double>;
template class Grid3<float>;

Tensor to_double(const FeatureMap& map) {
  std::vector<double> out(map.values().begin(), map.values().end());
  return Tensor(map.shape(), std::move(out));
}

FeatureMap to_float(const Tensor& tensor) {
  std::vector<float> out(tensor.size());
  std::transform(tensor.values().begin(), tensor.values().end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return FeatureMap(tensor.shape(), std::move(out));
}

bool all_finite(std::span<const double> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

bool all_finite(std::span<const float> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace posefuse
