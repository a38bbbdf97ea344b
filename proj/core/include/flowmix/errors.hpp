#pragma once

#include <stdexcept>
#include <string>

namespace flowmix {

/// A caller broke a documented precondition (shape mismatch, bad parameter).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A metric was asked to average over an empty set of pixels.
class NoValidPixels : public std::runtime_error {
 public:
  NoValidPixels() : std::runtime_error("no valid pixels") {}
  explicit NoValidPixels(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed flow file or image file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad experiment configuration; the message carries the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing, corrupt or incompatible checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A data source (distractor pool, batch stream, dataset) has nothing to give.
class EmptySourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss became non-finite.
class TrainingInstability : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace flowmix
