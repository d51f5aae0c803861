#include "axunet/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace axunet {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Shape shape_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  return strides;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument("shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
    out[rank - 1 - i] = std::max(ea, eb);
  }
  return out;
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor rank must be >= 1");
  for (auto e : shape)
    if (e < 1) throw std::invalid_argument("tensor extents must be >= 1, got " + shape_str(shape));
}
}  // namespace

template <class T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  buf_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), T(0));
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  buf_ = std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  validate_shape(shape_);
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape_))
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape_));
  buf_ = std::make_shared<std::vector<T>>(std::move(values));
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
  if (!buf_) return Tensor<T>();
  return Tensor<T>(shape_, *buf_);
}

template <class T>
bool Tensor<T>::same_values(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (!buf_ || !other.buf_) return buf_ == other.buf_;
  return *buf_ == *other.buf_;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace axunet
