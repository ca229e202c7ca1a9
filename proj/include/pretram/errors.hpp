#pragma once

#include <stdexcept>
#include <string>

namespace pretram {

// Error taxonomy mirrors the CLI exit-code contract:
//   2 config, 3 I/O, 4 numerical abort, 5 checkpoint mismatch.
// Everything else (shape errors, bad arguments) derives from std::invalid_argument
// and indicates a programming or input error caught at an API boundary.

struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointMismatch : std::runtime_error {
  explicit CheckpointMismatch(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pretram
