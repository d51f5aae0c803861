#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace axunet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
Shape shape_strides(const Shape& shape);

// Trailing-dimension broadcast; throws naming both shapes on mismatch.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Dense row-major tensor. The buffer is shared between copies; values are
// treated as immutable once they enter a computation graph. The only
// sanctioned in-place mutation is the optimizer updating parameters between
// forward passes.
template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, T fill);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool empty() const { return !buf_; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return buf_ ? static_cast<std::int64_t>(buf_->size()) : 0; }
  std::int64_t extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }

  T* data() { return buf_->data(); }
  const T* data() const { return buf_->data(); }

  T& operator[](std::int64_t i) { return (*buf_)[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return (*buf_)[static_cast<std::size_t>(i)]; }

  // Deep copy with its own buffer.
  Tensor clone() const;

  template <class U>
  Tensor<U> cast() const {
    if (!buf_) return Tensor<U>();
    std::vector<U> out(buf_->size());
    for (std::size_t i = 0; i < buf_->size(); ++i) out[i] = static_cast<U>((*buf_)[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_values(const Tensor& other) const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> buf_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace axunet
