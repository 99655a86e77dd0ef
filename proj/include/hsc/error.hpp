#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace hsc {

/// Exception carrying a short machine-readable code next to the message.
/// Codes in use: invalid_argument, non_finite, degenerate_data, io, config,
/// missing_models, numeric.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error("invalid_argument", message);
}

inline void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw Error("non_finite", std::string("non-finite value for ") + what);
}

}  // namespace hsc
