#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace add {

#ifdef ADD_DOUBLE_PRECISION
using real = double;
#else
using real = float;
#endif

enum class ErrorCode {
  InvalidArgument,  // bad shapes, bad dims, misuse of an op
  Config,           // inconsistent configuration / hyperparameters
  Io,               // filesystem problems
  Format,           // malformed file contents
  Numeric,          // non-finite values where finite ones are required
  Degenerate,       // degenerate geometry (collinear landmark sets)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// printf-style message formatting for error sites.
inline std::string strformat(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[512];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

[[noreturn]] inline void fail(ErrorCode code, std::string msg) { throw Error(code, std::move(msg)); }

#define ADD_CHECK(cond, code, ...)                                  \
  do {                                                              \
    if (!(cond)) ::add::fail((code), ::add::strformat(__VA_ARGS__)); \
  } while (0)

#define ADD_CHECK_ARG(cond, ...) ADD_CHECK(cond, ::add::ErrorCode::InvalidArgument, __VA_ARGS__)
#define ADD_CHECK_CFG(cond, ...) ADD_CHECK(cond, ::add::ErrorCode::Config, __VA_ARGS__)

}  // namespace add
