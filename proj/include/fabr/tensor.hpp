#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fabr/rng.hpp"

namespace fabr {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Values are written once by the op that creates the
// tensor and read-only afterwards; the optimizer mutates leaf storage between
// tapes. grad is allocated iff requires_grad and always matches data length.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {
    for (int d : shape_)
      if (d <= 0) throw std::runtime_error("tensor: nonpositive dim in " + shape_str(shape_));
    if (requires_grad) enable_grad();
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  std::vector<T>& vec() { return *data_; }
  const std::vector<T>& vec() const { return *data_; }
  const std::shared_ptr<std::vector<T>>& data_ptr() const { return data_; }

  bool requires_grad() const { return static_cast<bool>(grad_); }
  void enable_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
  }
  // Shallow const: backward closures hold tensors captured from const refs
  // and accumulate into the shared grad buffer through them.
  T* grad() const { return grad_->data(); }
  std::vector<T>& grad_vec() const { return *grad_; }
  const std::shared_ptr<std::vector<T>>& grad_ptr() const { return grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar " + shape_str(shape_));
    return (*data_)[0];
  }

  // factory helpers ----------------------------------------------------

  static TensorT zeros(Shape shape, bool rg = false) { return TensorT(std::move(shape), rg); }

  static TensorT full(Shape shape, T value, bool rg = false) {
    TensorT t(std::move(shape), rg);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
  }

  static TensorT ones(Shape shape, bool rg = false) { return full(std::move(shape), T(1), rg); }

  static TensorT from(Shape shape, std::vector<T> values, bool rg = false) {
    TensorT t(std::move(shape), rg);
    if (static_cast<std::int64_t>(values.size()) != t.numel())
      throw std::runtime_error("tensor: from() size mismatch");
    t.vec() = std::move(values);
    return t;
  }

  static TensorT randn(Shape shape, Rng& rng, T stddev = T(1), bool rg = false) {
    TensorT t(std::move(shape), rg);
    for (auto& v : t.vec()) v = static_cast<T>(rng.gaussian()) * stddev;
    return t;
  }

  TensorT clone() const {
    TensorT t(shape_, requires_grad());
    t.vec() = *data_;
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
inline void ensure_finite(const TensorT<T>& t, const char* op) {
  const T* p = t.data();
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(p[i])))
      throw std::runtime_error(std::string(op) + ": non-finite output at index " + std::to_string(i));
  }
}

} // namespace fabr
