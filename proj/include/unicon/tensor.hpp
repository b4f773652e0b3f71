#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace unicon {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class Tape;

/// Dense row-major f32 tensor. Copies share storage; a tensor optionally
/// refers to the tape node that produced it.
class Tensor {
 public:
  using Storage = Eigen::VectorXf;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  static Tensor of(Shape shape, std::initializer_list<float> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  /// Negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return storage_ ? storage_->size() : 0; }
  std::size_t bytes() const { return static_cast<std::size_t>(numel()) * sizeof(float); }
  bool defined() const { return static_cast<bool>(storage_); }

  const float* data() const { return storage_->data(); }
  float* data() { return storage_->data(); }
  std::span<const float> values() const { return {data(), static_cast<std::size_t>(numel())}; }
  std::span<float> values() { return {data(), static_cast<std::size_t>(numel())}; }
  float item() const;
  /// For reduction outputs, the double accumulator the f32 value was rounded
  /// from; otherwise item().
  double item_double() const;
  Tensor with_accumulator(double value) const;
  float at(std::int64_t flat_index) const { return (*storage_)[flat_index]; }

  Eigen::Map<const Eigen::ArrayXf> array() const { return {data(), numel()}; }
  Eigen::Map<Eigen::ArrayXf> array() { return {data(), numel()}; }

  /// Same values, no tape node.
  Tensor detached() const;
  /// Deep copy of the values, no tape node.
  Tensor clone() const;
  /// Same storage viewed under another shape of equal element count, no tape node.
  Tensor view(Shape shape) const;

  bool has_node() const { return node_ >= 0; }
  int node() const { return node_; }
  const Tape* tape() const { return tape_; }
  bool is_parameter_storage() const { return parameter_storage_; }
  /// Same tensor, flagged as aliasing parameter memory (excluded from
  /// activation accounting when saved).
  Tensor as_parameter_storage() const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  friend class Tape;
  friend struct Parameter;

  Shape shape_;
  std::shared_ptr<Storage> storage_;
  const Tape* tape_ = nullptr;
  int node_ = -1;
  bool parameter_storage_ = false;
  bool has_accumulator_ = false;
  double accumulator_ = 0.0;
};

bool bit_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace unicon
