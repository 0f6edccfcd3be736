#pragma once

#include <stdexcept>

namespace s2s2 {

/// Invalid configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure (exit code 3).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint or dataset file that does not parse (exit code 4).
class CorruptArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training aborted, e.g. on a non-finite loss (exit code 5).
class RunFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace s2s2
