#pragma once

#include <stdexcept>
#include <string>

namespace cedar {

// Error taxonomy used across the library. The CLI maps these onto its
// exit-code contract: 1 argument/validation, 2 IO/format/data, 3 numeric.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

// Thrown when a requested FVU level cannot be bracketed by the threshold
// search; carries the closest FVU the search could achieve.
struct ReachabilityError : Error {
  ReachabilityError(const std::string& what, double closest)
      : Error(what), closest_fvu(closest) {}
  double closest_fvu;
};

}  // namespace cedar
