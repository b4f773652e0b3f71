#include "unicon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace unicon {

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  storage_ = std::make_shared<Storage>(Storage::Zero(numel_of(shape_)));
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape_)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + to_string(shape_));
  }
  storage_ = std::make_shared<Storage>(numel_of(shape_));
  std::copy(values.begin(), values.end(), storage_->data());
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  t.storage_->setConstant(value);
  return t;
}

Tensor Tensor::of(Shape shape, std::initializer_list<float> values) {
  return Tensor(std::move(shape), std::vector<float>(values));
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + to_string(shape_));
  return shape_[axis];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
  return (*storage_)[0];
}

double Tensor::item_double() const {
  if (has_accumulator_ && numel() == 1) return accumulator_;
  return item();
}

Tensor Tensor::with_accumulator(double value) const {
  Tensor t = *this;
  t.has_accumulator_ = true;
  t.accumulator_ = value;
  return t;
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.storage_ = storage_;
  t.parameter_storage_ = parameter_storage_;
  t.has_accumulator_ = has_accumulator_;
  t.accumulator_ = accumulator_;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (storage_) t.storage_ = std::make_shared<Storage>(*storage_);
  t.has_accumulator_ = has_accumulator_;
  t.accumulator_ = accumulator_;
  return t;
}

Tensor Tensor::view(Shape shape) const {
  if (numel_of(shape) != numel()) {
    throw ShapeError("cannot view " + to_string(shape_) + " as " + to_string(shape));
  }
  Tensor t = detached();
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::as_parameter_storage() const {
  Tensor t = *this;
  t.parameter_storage_ = true;
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), a.bytes()) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.numel() == 0) return 0.0f;
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace unicon
