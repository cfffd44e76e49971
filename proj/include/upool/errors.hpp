#ifndef UPOOL_ERRORS_HPP
#define UPOOL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace upool {

enum class ErrorKind {
  Parse,
  Validation,
  BoundaryCount,
  NotFound,
  ResourceLimit,
  Domain,
  SingularDesign,
  Numeric,
};

// Single exception type carrying a kind; the CLI maps kinds to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &what) {
  throw Error(kind, what);
}

}  // namespace upool

#endif
