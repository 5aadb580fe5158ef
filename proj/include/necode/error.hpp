#pragma once

#include <stdexcept>
#include <string>

namespace necode {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on shapes, sizes or parameter ranges was violated.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Non-finite data, a diverging optimisation, or a failed numerical routine.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when no singular direction passes the insensitivity threshold.
class SubspaceError : public Error {
 public:
  SubspaceError(const std::string& what, double smallest_singular)
      : Error(what), smallest_singular_(smallest_singular) {}

  double smallest_singular() const noexcept { return smallest_singular_; }

 private:
  double smallest_singular_;
};

/// PSNR calibration could not bracket the requested target.
class CalibrationError : public Error {
 public:
  CalibrationError(const std::string& what, double lowest_db, double highest_db)
      : Error(what), lowest_db_(lowest_db), highest_db_(highest_db) {}

  double lowest_db() const noexcept { return lowest_db_; }
  double highest_db() const noexcept { return highest_db_; }

 private:
  double lowest_db_;
  double highest_db_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace necode
