#pragma once

#include <stdexcept>
#include <string>

namespace ampse {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible shapes (row/column counts).
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

/// Invalid argument values (non-symmetric input, bad config field, ...).
class InvalidInputError : public Error {
 public:
  explicit InvalidInputError(const std::string& msg) : Error(msg) {}
};

/// Cholesky/PD failure; carries the offending pivot or block index.
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(const std::string& msg, int index)
      : Error(msg), index_(index) {}
  int index() const { return index_; }

 private:
  int index_;
};

/// Rank-deficient residual in block Gram-Schmidt (degenerate dynamics).
class RankDeficiencyError : public Error {
 public:
  explicit RankDeficiencyError(const std::string& msg) : Error(msg) {}
};

/// Iterative solver failed to reach tolerance; carries the final residual.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, double residual)
      : Error(msg), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

}  // namespace ampse
