#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcqmc {

// Error categories. The CLI maps them onto process exit codes.

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ResourceLimit : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed or truncated input file. `offset` is the byte position where
/// parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset = 0)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace dcqmc
