#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include <Eigen/Core>

namespace changer {

/// Thrown whenever operand shapes violate an op's contract.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for numeric failures (non-finite loss or gradients).
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense rank-4 array in NCHW order, 64-bit throughout.
class Tensor4 {
public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, double fill = 0.0);
  Tensor4(Shape shape, Eigen::VectorXd data);

  static Tensor4 zeros(Shape shape) { return Tensor4(shape, 0.0); }
  static Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.shape(), 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  bool empty() const { return shape_.numel() == 0; }

  Eigen::VectorXd& vec() { return data_; }
  const Eigen::VectorXd& vec() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(int n, int c, int h, int w) { return data_[static_cast<Eigen::Index>(index(n, c, h, w))]; }
  double operator()(int n, int c, int h, int w) const {
    return data_[static_cast<Eigen::Index>(index(n, c, h, w))];
  }
  double& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  double operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  bool all_finite() const { return data_.allFinite(); }
  bool bitwise_equal(const Tensor4& other) const;

private:
  Shape shape_{};
  Eigen::VectorXd data_;
};

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op);

/// One learnable leaf. Vectors (biases, norm affines) are stored with shape (1, c, 1, 1).
struct ParamEntry {
  std::string name;
  Tensor4 value;
  Tensor4 grad;
  bool trainable = true;
  bool decay = true;
};

/// Named, insertion-ordered parameter collection. Entry addresses are stable.
class Parameters {
public:
  std::size_t add(std::string name, Tensor4 value, bool decay = true);

  std::size_t size() const { return entries_.size(); }
  ParamEntry& operator[](std::size_t i) { return entries_.at(i); }
  const ParamEntry& operator[](std::size_t i) const { return entries_.at(i); }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  /// Total trainable scalar count.
  std::size_t count() const;

private:
  std::deque<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

} // namespace changer
