#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace posefuse {

/// Channel-major (C, H, W) extent of a feature map.
struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape3&) const = default;
};

std::string to_string(const Shape3& shape);

/// Dense C×H×W grid, row-major with W fastest.
template <typename T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}
  Grid3(Shape3 shape, std::vector<T> data);

  const Shape3& shape() const noexcept { return shape_; }
  int channels() const noexcept { return shape_.channels; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }

  T& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
  const T& at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  std::span<T> channel(int c) noexcept { return {data_.data() + c * shape_.plane(), shape_.plane()}; }
  std::span<const T> channel(int c) const noexcept {
    return {data_.data() + c * shape_.plane(), shape_.plane()};
  }

  bool operator==(const Grid3&) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape3 shape_{};
  std::vector<T> data_;
};

using Tensor = Grid3<double>;
using FeatureMap = Grid3<float>;

Tensor to_double(const FeatureMap& map);
FeatureMap to_float(const Tensor& tensor);

bool all_finite(std::span<const double> values) noexcept;
bool all_finite(std::span<const float> values) noexcept;

}  // namespace posefuse
