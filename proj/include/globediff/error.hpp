#pragma once

#include <stdexcept>
#include <string>

namespace globediff {

// Bad argument ranges, dimension mismatches and step indices all land here.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DimensionMismatch : public InvalidArgument {
 public:
  DimensionMismatch(const std::string& where, std::size_t expected, std::size_t got)
      : InvalidArgument(where + ": expected dimension " + std::to_string(expected) +
                        ", got " + std::to_string(got)) {}
};

// A loss or gradient went NaN/Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed config, dataset or checkpoint content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void expect_dim(const char* where, std::size_t expected, std::size_t got) {
  if (expected != got) throw DimensionMismatch(where, expected, got);
}

}  // namespace globediff
