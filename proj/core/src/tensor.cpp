#include "mcmdpo/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mcmdpo {

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor() : shape_{1}, data_{0.0} {}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  int64_t n = 1;
  for (int64_t d : shape_) {
    if (d <= 0) {
      throw std::invalid_argument("Tensor: non-positive dimension in shape " +
                                  shape_to_string(shape_));
    }
    n *= d;
  }
  if (shape_.empty()) throw std::invalid_argument("Tensor: empty shape");
  if (n != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) +
                                " wants " + std::to_string(n) + " values, got " +
                                std::to_string(data_.size()));
  }
  if (!all_finite()) {
    throw std::invalid_argument("Tensor: non-finite value rejected");
  }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const int64_t n = static_cast<int64_t>(values.size());
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

int64_t Tensor::rows() const {
  if (!is_matrix()) throw std::logic_error("Tensor::rows: not a matrix, shape " + shape_str());
  return shape_[0];
}

int64_t Tensor::cols() const {
  if (!is_matrix()) throw std::logic_error("Tensor::cols: not a matrix, shape " + shape_str());
  return shape_[1];
}

double Tensor::scalar_value() const {
  if (!is_scalar()) throw std::logic_error("Tensor::scalar_value: shape " + shape_str());
  return data_[0];
}

double Tensor::at(int64_t r, int64_t c) const {
  return data_[static_cast<size_t>(r * cols() + c)];
}

double& Tensor::at(int64_t r, int64_t c) {
  return data_[static_cast<size_t>(r * cols() + c)];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace mcmdpo
