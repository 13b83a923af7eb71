#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace qrgt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// a·b, coefficient-based below 4096 multiply-adds where blocked GEMM setup
/// dominates.
template <class A, class B>
Eigen::MatrixXd mul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() * a.cols() * b.cols() <= 4096) return a.lazyProduct(b);
  return a * b;
}

/// Stacked per-agent variables: element i is agent i's d×r block.
using Stack = std::vector<Matrix>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class RetractionError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Configuration key failed validation; key() names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b,
                               const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(where) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

inline Matrix stack_mean(const Stack& xs) {
  if (xs.empty()) throw ShapeError("stack_mean: empty stack");
  Matrix acc = Matrix::Zero(xs.front().rows(), xs.front().cols());
  for (const auto& x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

}  // namespace qrgt
