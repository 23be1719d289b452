#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mcmdpo {

std::string shape_to_string(const std::vector<int64_t>& shape);

// Dense row-major array of 64-bit reals. Every dimension is positive,
// product(shape) == data.size(), and all stored values are finite; the
// constructor rejects anything else so non-finite values never enter a graph.
class Tensor {
 public:
  Tensor();  // scalar zero, shape {1}
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor row(std::vector<double> values);  // shape {1, n}
  static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> data);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool is_scalar() const { return data_.size() == 1; }
  bool is_matrix() const { return shape_.size() == 2; }
  int64_t rows() const;
  int64_t cols() const;

  double scalar_value() const;
  double at(int64_t r, int64_t c) const;
  double& at(int64_t r, int64_t c);
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const { return shape_to_string(shape_); }

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace mcmdpo
