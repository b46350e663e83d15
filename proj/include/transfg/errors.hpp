#pragma once

#include <stdexcept>
#include <string>

namespace transfg {

// Extents disagree between operands (or between data and a config).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration violates its documented invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input is outside the domain of the operation (zero vector, empty token set).
class DegenerateInputError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller broke a precondition that is not a shape problem.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace transfg
