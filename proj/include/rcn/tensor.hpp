#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcn {

// Dense 5D tensor over (batch, channels, time, height, width), row-major.
// All activations, kernels and per-frame score maps use this layout; lower
// rank data (per-channel vectors, scalars) sets the unused extents to 1.
struct Shape5 {
  int b = 1, c = 1, t = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(b) * c * t * h * w;
  }
  bool operator==(const Shape5& o) const {
    return b == o.b && c == o.c && t == o.t && h == o.h && w == o.w;
  }
  bool operator!=(const Shape5& o) const { return !(*this == o); }

  std::string str() const {
    return "(" + std::to_string(b) + "," + std::to_string(c) + "," +
           std::to_string(t) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape5 s) : shape_(s), data_(s.numel(), T(0)) {
    if (s.b < 1 || s.c < 1 || s.t < 1 || s.h < 1 || s.w < 1)
      throw std::invalid_argument("tensor dims must be >= 1, got " + s.str());
  }
  Tensor(Shape5 s, T fill) : Tensor(s) {
    for (auto& v : data_) v = fill;
  }

  const Shape5& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& at(int b, int c, int t, int h, int w) {
    return data_[index(b, c, t, h, w)];
  }
  T at(int b, int c, int t, int h, int w) const {
    return data_[index(b, c, t, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int b, int c, int t, int h, int w) const {
    return (((static_cast<std::size_t>(b) * shape_.c + c) * shape_.t + t) *
                shape_.h +
            h) *
               shape_.w +
           w;
  }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  bool finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape5 shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Precision tags. Wide precision backs every equivalence and gradient test;
// narrow is the training-speed option.
enum class Dtype : std::uint8_t { kWide = 0, kNarrow = 1 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<double>() {
  return Dtype::kWide;
}
template <>
constexpr Dtype dtype_of<float>() {
  return Dtype::kNarrow;
}

inline const char* dtype_name(Dtype d) {
  return d == Dtype::kWide ? "wide" : "narrow";
}

}  // namespace rcn
