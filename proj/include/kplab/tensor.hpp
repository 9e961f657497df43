#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kplab/error.hpp"

namespace kplab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Dense row-major array of doubles. Storage is shared between copies and
// cloned on first mutation, so passing tensors by value is cheap.
//
// A tensor is "tracked" when it carries a node on a Tape; only tracked
// tensors take part in backward(). Untracked tensors never touch a tape.
class Tensor {
 public:
  Tensor() = default;

  // Throws ShapeMismatch when product(shape) != data.size() or any extent is
  // zero, NonFinite on NaN/inf entries.
  static Tensor from(std::vector<double> data, Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_ ? data_->size() : 0; }
  bool defined() const noexcept { return static_cast<bool>(data_); }

  std::span<const double> data() const noexcept;
  std::span<double> mutable_data();
  const double* ptr() const noexcept { return data_ ? data_->data() : nullptr; }

  double item() const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  // Same values, no tape node.
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;  // untracked reshape

 private:
  friend class Tape;
  // Unchecked constructor for op outputs; values are the op's responsibility.
  Tensor(std::shared_ptr<std::vector<double>> data, Shape shape)
      : shape_(std::move(shape)), data_(std::move(data)) {}

 public:
  static Tensor wrap(std::vector<double> data, Shape shape);

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

bool all_finite(std::span<const double> values);

}  // namespace kplab
