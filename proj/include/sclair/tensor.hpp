#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sclair {

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major n-d array. Instantiated for float (training mode) and
// double (verification mode). Ops are pure; tensors handed out by an op are
// treated as immutable and are safe to share read-only across threads.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static Tensor row(std::vector<T> values) {
    Tensor t;
    t.shape_ = {values.size()};
    t.data_ = std::move(values);
    return t;
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    if (values.size() != rows * cols) {
      throw std::invalid_argument("Tensor::matrix: " + std::to_string(values.size()) +
                                  " values for shape [" + std::to_string(rows) + " x " +
                                  std::to_string(cols) + "]");
    }
    Tensor t;
    t.shape_ = {rows, cols};
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t i) const { return shape_.at(i); }

  std::size_t rows() const {
    assert(rank() == 2);
    return shape_[0];
  }
  std::size_t cols() const {
    assert(rank() == 2);
    return shape_[1];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) {
    assert(i < data_.size());
    return data_[i];
  }
  const T& operator[](std::size_t i) const {
    assert(i < data_.size());
    return data_[i];
  }

  T& at(std::size_t i, std::size_t j) {
    assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
    return data_[i * shape_[1] + j];
  }
  const T& at(std::size_t i, std::size_t j) const {
    assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
    return data_[i * shape_[1] + j];
  }

  void fill(T v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

// ---- primitive ops (defined in tensor.cpp for float and double) ----

// Standard matrix product [m x k] * [k x n]; throws naming both shapes on
// mismatch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a^T * b with a [k x m], b [k x n] -> [m x n]
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

// a * b^T with a [m x k], b [n x k] -> [m x n]
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// w [m x k] * x [k] -> [m]
template <class T>
Tensor<T> matvec(const Tensor<T>& w, const Tensor<T>& x);

// w^T * x with w [m x k], x [m] -> [k]
template <class T>
Tensor<T> matvec_tn(const Tensor<T>& w, const Tensor<T>& x);

template <class T>
Tensor<T> transpose(const Tensor<T>& a);

// Log-sum-exp stabilized softmax of a vector.
template <class T>
Tensor<T> softmax_stable(const Tensor<T>& v);

// v / max(||v||, eps); the eps guard maps the zero vector to itself.
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& v, T eps = T(1e-12));

template <class T>
T l2_norm(const Tensor<T>& v);

template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b);

// y += alpha * x
template <class T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y);

// FNV-1a over the raw bytes of the payload; used for weight freeze checks.
template <class T>
std::uint64_t tensor_bytes_hash(const Tensor<T>& t, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace sclair
