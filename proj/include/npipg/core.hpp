#pragma once

#include <Eigen/Core>

#include <optional>
#include <stdexcept>
#include <string>

namespace npipg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
/// Dense blocks of the constraint matrix are stored row-major.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VecRef = Eigen::Ref<Vec>;
using CVecRef = Eigen::Ref<const Vec>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what, std::optional<int> block = std::nullopt)
      : Error(block ? what + " (block " + std::to_string(*block) + ")" : what), block_(block) {}

  /// Index of the offending block, when one can be named.
  std::optional<int> block() const { return block_; }

 private:
  std::optional<int> block_;
};

class NonPositiveWeight : public Error {
 public:
  using Error::Error;
};

class MalformedSet : public Error {
 public:
  using Error::Error;
};

class DegenerateProblem : public Error {
 public:
  using Error::Error;
};

class EigFailure : public Error {
 public:
  using Error::Error;
};

class SingularMiddleFactor : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(int stage)
      : Error("block Cholesky failed: pivot block " + std::to_string(stage) +
              " is not positive definite"),
        stage_(stage) {}

  int stage() const { return stage_; }

 private:
  int stage_;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

}  // namespace npipg
