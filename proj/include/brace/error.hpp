#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace brace {

/// Base error for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Raised by BRACE_ASSERT when internal invariants are violated.
class AssertionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

}  // namespace brace

// Internal consistency checks. On in debug builds, or whenever
// BRACE_ENABLE_ASSERTS is defined (the unit tests do this).
#if !defined(NDEBUG) || defined(BRACE_ENABLE_ASSERTS)
#define BRACE_ASSERT(cond, msg)                                           \
  do {                                                                    \
    if (!(cond)) {                                                        \
      throw ::brace::AssertionError(::brace::detail::concat(             \
          "assertion failed: ", #cond, " (", msg, ") at ", __FILE__, ":", \
          __LINE__));                                                     \
    }                                                                     \
  } while (0)
#define BRACE_ASSERTS_ENABLED 1
#else
#define BRACE_ASSERT(cond, msg) \
  do {                          \
    (void)sizeof(cond);         \
  } while (0)
#define BRACE_ASSERTS_ENABLED 0
#endif
