#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xembody {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or stream extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a precondition (non-scalar loss, mixed embodiments, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

/// A function under finite-difference probing returned a non-finite value.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class ExecutionError : public Error {
 public:
  using Error::Error;
};

class CompatibilityError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

/// Bad magic, version or schema in an on-disk file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ended early; `offset` is the byte position where reading failed.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training hit a non-finite loss or gradient.
class TrainingAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace xembody
