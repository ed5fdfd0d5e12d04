#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "tafcal/errors.hpp"

namespace tafcal {

// Storage precision of a run. The numeric kernels are templated on the
// scalar; this tag selects the instantiation at the harness boundary.
enum class Precision : std::uint8_t { f32 = 1, f64 = 2 };

inline const char* to_string(Precision p) {
  return p == Precision::f32 ? "single" : "double";
}

struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

// Dense rank-4 tensor (batch, channels, height, width), row-major.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;

  explicit Tensor4(Shape4 s) : shape_(s) {
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
      fail(ErrorCategory::invalid_argument, "tensor dims must be positive, got " + s.str());
    data_.assign(s.numel(), T(0));
  }

  Tensor4(int n, int c, int h, int w) : Tensor4(Shape4{n, c, h, w}) {}

  static Tensor4 full(Shape4 s, T v) {
    Tensor4 t(s);
    t.fill(v);
    return t;
  }

  const Shape4& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * static_cast<std::size_t>(shape_.c) +
             static_cast<std::size_t>(c)) *
                static_cast<std::size_t>(shape_.h) +
            static_cast<std::size_t>(h)) *
               static_cast<std::size_t>(shape_.w) +
           static_cast<std::size_t>(w);
  }

  T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  // Pointer to the (n, c) spatial plane, h*w contiguous values.
  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  std::size_t plane_size() const {
    return static_cast<std::size_t>(shape_.h) * static_cast<std::size_t>(shape_.w);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor4& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (const T v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
  if (!a.same_shape(b))
    fail(ErrorCategory::invalid_argument,
         std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

}  // namespace tafcal
