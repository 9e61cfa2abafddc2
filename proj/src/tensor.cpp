#include "changer/tensor.hpp"

#include <cstring>
#include <sstream>

namespace changer {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

Tensor4::Tensor4(Shape shape, double fill)
    : shape_(shape), data_(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(shape.numel()), fill)) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension in " + shape.str());
  }
}

Tensor4::Tensor4(Shape shape, Eigen::VectorXd data) : shape_(shape), data_(std::move(data)) {
  if (static_cast<std::size_t>(data_.size()) != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
  }
}

bool Tensor4::bitwise_equal(const Tensor4& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), sizeof(double) * shape_.numel()) == 0;
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

std::size_t Parameters::add(std::string name, Tensor4 value, bool decay) {
  if (lookup_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  const std::size_t idx = entries_.size();
  ParamEntry e;
  e.grad = Tensor4::zeros_like(value);
  e.value = std::move(value);
  e.name = name;
  e.decay = decay;
  entries_.push_back(std::move(e));
  lookup_.emplace(std::move(name), idx);
  return idx;
}

std::size_t Parameters::index_of(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second;
}

ParamEntry& Parameters::at(const std::string& name) { return entries_[index_of(name)]; }
const ParamEntry& Parameters::at(const std::string& name) const { return entries_[index_of(name)]; }

void Parameters::zero_grad() {
  for (auto& e : entries_) {
    e.grad.vec().setZero();
  }
}

std::size_t Parameters::count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) {
    if (e.trainable) {
      total += e.value.numel();
    }
  }
  return total;
}

} // namespace changer
