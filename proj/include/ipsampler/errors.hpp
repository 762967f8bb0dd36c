#pragma once

#include <stdexcept>
#include <string>

namespace ips {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidArgumentError : public Error {
 public:
  explicit InvalidArgumentError(const std::string& msg) : Error(msg) {}
};

// Raised when a matrix that must be invertible is numerically singular.
class SingularMatrixError : public Error {
 public:
  explicit SingularMatrixError(const std::string& msg) : Error(msg) {}
};

// Cholesky failed even after the jitter budget was exhausted. Carries the most
// negative eigenvalue so callers can report how indefinite the input was.
class NotPositiveDefiniteError : public Error {
 public:
  NotPositiveDefiniteError(const std::string& msg, double most_negative_eigenvalue)
      : Error(msg), most_negative_eigenvalue_(most_negative_eigenvalue) {}
  double most_negative_eigenvalue() const { return most_negative_eigenvalue_; }

 private:
  double most_negative_eigenvalue_;
};

// A sample set does not carry enough information for the requested statistic
// (too few draws, collinear draws, and so on).
class RankDeficiencyError : public Error {
 public:
  explicit RankDeficiencyError(const std::string& msg) : Error(msg) {}
};

// A dimension of a sample set has (numerically) zero variance.
class DegenerateDimensionError : public Error {
 public:
  DegenerateDimensionError(const std::string& msg, int dimension)
      : Error(msg), dimension_(dimension) {}
  int dimension() const { return dimension_; }

 private:
  int dimension_;
};

// Doppler factors blow up at |V| >= 1; model evaluation refuses to continue.
class UnphysicalVelocityError : public Error {
 public:
  explicit UnphysicalVelocityError(const std::string& msg) : Error(msg) {}
};

// Configuration parse or validation failure. Carries the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& msg, std::string key = "")
      : Error(msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Step size or schedule adaptation could not reach its target.
class AdaptationError : public Error {
 public:
  explicit AdaptationError(const std::string& msg) : Error(msg) {}
};

// A temperature schedule has an edge with (near) zero swap acceptance, so
// communication along the ladder is broken and adaptation cannot proceed.
class ScheduleTooSparseError : public Error {
 public:
  ScheduleTooSparseError(const std::string& msg, int edge) : Error(msg), edge_(edge) {}
  int edge() const { return edge_; }

 private:
  int edge_;
};

// No rung of a trial ladder passed the mixing check.
class NoMixingRungError : public Error {
 public:
  explicit NoMixingRungError(const std::string& msg) : Error(msg) {}
};

}  // namespace ips
