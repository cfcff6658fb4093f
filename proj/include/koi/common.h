#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace koi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Grayscale image, row-major, intensities in [0, 1].
using Frame =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value violates a documented type invariant.
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Input files or annotator replies that cannot be parsed.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what, std::string raw = {})
      : Error(what), raw_(std::move(raw)) {}
  // The offending payload, when one is available.
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Shapes or lengths of two operands disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace koi
