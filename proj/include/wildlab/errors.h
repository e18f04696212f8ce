#ifndef WILDLAB_ERRORS_H_
#define WILDLAB_ERRORS_H_

#include <stdexcept>
#include <string>

namespace wildlab {

// Bad configuration or precondition violation. Maps to CLI exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed WDS1 / WNN1 / session file.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure that is not a caller error (e.g. no dominant direction).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when ground-truth membership tags are read inside a region that
// must stay blind to them (scoring, selection).
class MembershipAccessError : public std::logic_error {
 public:
  explicit MembershipAccessError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace wildlab

#endif  // WILDLAB_ERRORS_H_
