#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "acmt/error.hpp"

namespace acmt::diff {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Eigen picks its vector peeling from the buffer address, so unaligned storage makes
// reductions depend on where the allocator happened to put the data.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense 64-bit array with a dimension list. The primitives work on rank-2 tensors;
/// scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {}

  Tensor(std::vector<std::size_t> shape, const std::vector<double>& values)
      : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

  Tensor(std::vector<std::size_t> shape, Storage values) : shape_(std::move(shape)), values_(std::move(values)) {
    const auto count = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    require(count == values_.size(), ErrorCategory::shape,
            "tensor of shape " + shape_string() + " cannot hold " + std::to_string(values_.size()) + " values");
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, Storage{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, const std::vector<double>& values) {
    return Tensor({rows, cols}, values);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::size_t rows() const {
    require(rank() == 2, ErrorCategory::shape, "expected a rank-2 tensor, got " + shape_string());
    return shape_[0];
  }
  std::size_t cols() const {
    require(rank() == 2, ErrorCategory::shape, "expected a rank-2 tensor, got " + shape_string());
    return shape_[1];
  }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  Storage& values() { return values_; }
  const Storage& values() const { return values_; }
  std::vector<double> to_vector() const { return {values_.begin(), values_.end()}; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  MatMap mat() { return MatMap(values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())); }
  ConstMatMap mat() const {
    return ConstMatMap(values_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "x" : "") + std::to_string(shape_[i]);
    return s + "]";
  }

 private:
  std::vector<std::size_t> shape_;
  Storage values_;
};

/// Named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Ordered parameter collection. Its size is fixed after construction so that
/// references handed to a Tape stay valid.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value) {
    for (const auto& p : params_)
      require(p.name != name, ErrorCategory::precondition, "duplicate parameter name '" + name + "'");
    Tensor grad(value.shape(), Storage(value.size(), 0.0));
    params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw Error(ErrorCategory::mismatch, "no parameter named '" + name + "'");
  }
  const Parameter& get(const std::string& name) const { return const_cast<ParamStore*>(this)->get(name); }
  bool contains(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return true;
    return false;
  }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  void reserve(std::size_t n) { params_.reserve(n); }

 private:
  std::vector<Parameter> params_;
};

}  // namespace acmt::diff
