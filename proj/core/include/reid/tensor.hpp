#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reid {

// Error categories. Messages always name the offending shape/file/key.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string dims_to_string(const std::vector<std::size_t>& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

/**
 * Dense row-major N-dimensional array. T is float for training/inference
 * and double for gradient checking.
 */
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims)
      : dims_(std::move(dims)), data_(checked_size(dims_), T(0)) {}

  Tensor(std::vector<std::size_t> dims, std::vector<T> values)
      : dims_(std::move(dims)), data_(std::move(values)) {
    if (data_.size() != checked_size(dims_)) {
      throw ShapeError("tensor value count " + std::to_string(data_.size()) +
                       " does not match dims " + dims_to_string(dims_));
    }
  }

  static Tensor full(std::vector<std::size_t> dims, T value) {
    Tensor t(std::move(dims));
    for (auto& v : t.data_) v = value;
    return t;
  }

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major composite indexing for the common ranks.
  T& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return data_[i * dims_[1] + j];
  }
  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * dims_[1] + h) * dims_[2] + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * dims_[1] + h) * dims_[2] + w];
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h,
              std::size_t w) const {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  Tensor& operator+=(const Tensor& o) {
    require_same_dims(o, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(dims_, std::move(out));
  }

  void require_same_dims(const Tensor& o, const char* what) const {
    if (!same_dims(o)) {
      throw ShapeError(std::string(what) + ": dims " + dims_to_string(dims_) +
                       " vs " + dims_to_string(o.dims_));
    }
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) {
      if (d == 0) throw ShapeError("zero extent in dims " + dims_to_string(dims));
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace reid
