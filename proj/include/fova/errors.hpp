#pragma once

#include <stdexcept>
#include <string>

namespace fova {

/// Invalid sizes, ranges or configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape mismatch between objects that must agree.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value lies outside the domain of a mathematical operation
/// (zero denominators, unsupported KL mass, empty datasets).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// File system failures; the message names the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fova
