// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace nvqad {

// All contract violations in this library throw Error; nothing aborts.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
[[noreturn]] inline void fail(const char* file, int line, const char* cond, const std::string& msg) {
  std::ostringstream os;
  os << file << ":" << line << ": check failed: " << cond;
  if (!msg.empty()) os << " | " << msg;
  throw Error(os.str());
}
}  // namespace detail

}  // namespace nvqad

// Usage: NVQAD_CHECK(a == b, "shapes " << a << " vs " << b). The message
// expression is evaluated only on failure.
#define NVQAD_CHECK(cond, msg_expr)                                    \
  do {                                                                 \
    if (!(cond)) {                                                     \
      std::ostringstream nvqad_check_os_;                              \
      nvqad_check_os_ << msg_expr;                                     \
      ::nvqad::detail::fail(__FILE__, __LINE__, #cond,                 \
                            nvqad_check_os_.str());                    \
    }                                                                  \
  } while (0)
