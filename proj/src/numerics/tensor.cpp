#include "merv/tensor.hpp"

#include <cmath>
#include <sstream>

#include "merv/errors.hpp"

namespace merv {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
#ifdef MERV_CHECKED
  if (!std::isfinite(fill)) throw FormatError("non-finite fill value");
#endif
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
#ifdef MERV_CHECKED
  check_finite();
#endif
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicTensor({m, n}, std::move(data));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::vector(std::initializer_list<T> values) {
  return BasicTensor({values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

template <typename T>
std::size_t BasicTensor<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw DimensionError("index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw DimensionError("index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename T>
T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <typename T>
const T& BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const& {
  BasicTensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) && {
  validate_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  BasicTensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data_);
  return out;
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  for (auto& v : data_) v = value;
}

template <typename T>
void BasicTensor<T>::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw FormatError("non-finite tensor value at flat index " + std::to_string(i));
    }
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace merv
