#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gdpnet {

// Error categories map onto CLI exit codes: usage=1, data=2, numeric=3.
// Shape errors are contract violations between tensors; the CLI reports
// them as data errors.
enum class ErrorKind { usage, data, shape, numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_shape(const std::string& msg) {
  throw Error(ErrorKind::shape, msg);
}
[[noreturn]] inline void throw_data(const std::string& msg) {
  throw Error(ErrorKind::data, msg);
}
[[noreturn]] inline void throw_numeric(const std::string& msg) {
  throw Error(ErrorKind::numeric, msg);
}
[[noreturn]] inline void throw_usage(const std::string& msg) {
  throw Error(ErrorKind::usage, msg);
}

template <typename T>
inline bool is_finite(T v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace gdpnet
