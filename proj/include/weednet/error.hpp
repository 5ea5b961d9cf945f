#pragma once

// Error taxonomy. Every failure surfaced by the library is one of these,
// all rooted at weednet::Error so callers can catch broadly or narrowly.

#include <stdexcept>
#include <string>

namespace weednet {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched or invalid tensor/layer shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad argument values (invalid one-hot rows, out-of-range pixels or classes).
class InputError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong order (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Invalid architecture or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset directory problems (missing class folders, too few samples).
class DatasetError : public Error {
 public:
  using Error::Error;
};

// Unreadable or unsupported image files.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Checkpoint files with the wrong magic or version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoint files that are structurally valid but truncated or inconsistent.
class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace weednet
