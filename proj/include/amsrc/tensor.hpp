#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "amsrc/error.hpp"

namespace amsrc {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

// 64-byte aligned storage. Vectorized reductions peel by address, so a fixed
// alignment keeps their summation order identical across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

// Dense row-major tensor. Rank is whatever the shape says; the network code
// works on [N, C, H, W].
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      fail(ErrorKind::data, "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                                shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessors.
  T& at(int n, int c, int h, int w) noexcept { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const noexcept { return data_[offset(n, c, h, w)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  // Slice along the leading axis.
  Tensor slice(int begin, int count) const {
    Shape s = shape_;
    const std::size_t inner = data_.size() / static_cast<std::size_t>(shape_[0]);
    s[0] = count;
    return Tensor(s, Storage(data_.begin() + static_cast<std::ptrdiff_t>(inner * begin),
                                    data_.begin() + static_cast<std::ptrdiff_t>(inner * (begin + count))));
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, typename Tensor<U>::Storage(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::size_t offset(int n, int c, int h, int w) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  Storage data_;
};

using Tensorf = Tensor<float>;

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    fail(ErrorKind::data, what + ": expected shape " + shape_str(expected) + ", got " + shape_str(t.shape()));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const std::string& what) {
  if (a.shape() != b.shape())
    fail(ErrorKind::data, what + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Stack equally-shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s.insert(s.begin(), static_cast<int>(parts.size()));
  typename Tensor<T>::Storage data;
  data.reserve(shape_numel(s));
  for (const auto& p : parts) {
    require_same_shape(p, parts.front(), "stack");
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor<T>(std::move(s), std::move(data));
}

}  // namespace amsrc
