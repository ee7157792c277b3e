#pragma once

#include <stdexcept>
#include <string>

namespace fvlfp {

// Root of every exception thrown by the library. The C API maps each subclass
// onto a status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity surfaced in a kernel, a loss, or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Degenerate inputs: empty metric cells, all-zero fusion scores, too few
// samples for a balanced draw.
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fvlfp
