#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace mscn {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or mismatched shapes supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was broken (wrong pipeline order, non-scalar loss, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Batch normalization in train mode needs at least two values per channel.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint or manifest bytes that cannot be trusted.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Image decode failure (corrupt file, unsupported depth).
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures: missing files, unwritable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

template <typename E = ContractViolation, typename... Args>
void require(bool cond, Args&&... args) {
  if (!cond) throw E(detail::concat(std::forward<Args>(args)...));
}

}  // namespace mscn
