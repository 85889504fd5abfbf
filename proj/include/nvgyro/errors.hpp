#pragma once

#include <stdexcept>
#include <string>

namespace nvgyro {

/// A documented precondition of an operation was violated by its inputs.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration cannot describe a physical setup (e.g. bath too small).
class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The data cannot determine the requested quantity.
class IdentifiabilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace nvgyro
