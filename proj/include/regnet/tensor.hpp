#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "regnet/error.hpp"

namespace regnet {

// std::vector storage whose plain resize leaves trivial elements
// uninitialized; explicit fills stay explicit. Big op outputs are fully
// overwritten, so default zeroing would just be an extra memory pass.
template <typename T>
struct SkipInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = SkipInitAllocator<U>;
  };
  template <typename U>
  void construct(U*) noexcept {}
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

// All values are dense 4-D (batch, channel, height, width), row-major with w
// innermost. Vectors (biases, BN scale/shift) are stored as (len, 1, 1, 1);
// flattened features as (n, k, 1, 1); scalars as (1, 1, 1, 1).
struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

template <typename T>
struct Tensor {
  using Storage = std::vector<T, SkipInitAllocator<T>>;

  Shape shape{};
  Storage data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(static_cast<std::size_t>(check_shape(s)), T(0)) {}
  Tensor(Shape s, T fill) : shape(s), data(static_cast<std::size_t>(check_shape(s)), fill) {}

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, T v) { return Tensor(s, v); }
  static Tensor uninitialized(Shape s) {
    Tensor t;
    t.shape = s;
    t.data.resize(static_cast<std::size_t>(check_shape(s)));
    return t;
  }

  bool empty() const { return data.empty(); }
  std::int64_t numel() const { return shape.numel(); }

  std::int64_t index(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) const {
    return ((in * shape.c + ic) * shape.h + ih) * shape.w + iw;
  }
  T& at(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) {
    return data[static_cast<std::size_t>(index(in, ic, ih, iw))];
  }
  const T& at(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) const {
    return data[static_cast<std::size_t>(index(in, ic, ih, iw))];
  }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(T(0)); }

  bool all_finite() const;

 private:
  static std::int64_t check_shape(Shape s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw InvalidArgument("tensor shape has negative extent: " + s.str());
    }
    return s.numel();
  }
};

template <typename T>
const char* dtype_name();  // "f32" / "f64"

// Uniform in [lo, hi). Draw order is pinned to element order.
template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937& rng, T lo, T hi);

// Standard normal draws, one per element in order.
template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937& rng);

template <typename T>
Tensor<T> random_normal(Shape s, std::mt19937& rng) {
  Tensor<T> t(s);
  fill_normal(t, rng);
  return t;
}

// max |a-b| / max(|a|, |b|, floor) over all elements; shapes must agree.
template <typename T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-3);

}  // namespace regnet
