#pragma once

#include <stdexcept>
#include <string>

namespace kfdiff {

// Every error carries a short machine-parsable category; the CLI prints
// "error: <category>: <message>" and exits non-zero.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct RangeError : Error {
  explicit RangeError(const std::string& m) : Error("range", m) {}
};
struct InputError : Error {
  explicit InputError(const std::string& m) : Error("input", m) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& m) : Error("precondition", m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};
struct VersionError : Error {
  explicit VersionError(const std::string& m) : Error("version", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};
struct MissingFileError : Error {
  explicit MissingFileError(const std::string& m) : Error("missing-file", m) {}
};

}  // namespace kfdiff
