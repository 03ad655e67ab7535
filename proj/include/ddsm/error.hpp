#pragma once

#include <stdexcept>
#include <string>

namespace ddsm {

// Every failure raised by the library derives from Error. exit_code() is the
// process status the command-line front end reports for it.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual int exit_code() const noexcept { return 1; }
};

// Bad arguments, malformed configuration, violated preconditions.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
  int exit_code() const noexcept override { return 2; }
};

// Solver breakdown, non-finite values, incompatible data.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what) {}
  int exit_code() const noexcept override { return 3; }
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
  int exit_code() const noexcept override { return 4; }
};

}  // namespace ddsm
