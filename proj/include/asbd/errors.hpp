#ifndef ASBD_ERRORS_HPP
#define ASBD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace asbd {

// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An id or axis lies outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Invalid hyperparameters or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an API contract (e.g. backward twice on one tape).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or Inf produced where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data is well-formed but unusable (empty corpus, empty reference, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace asbd

#endif  // ASBD_ERRORS_HPP
