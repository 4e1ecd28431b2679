#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace raml {

inline constexpr const char* kToolVersion = "0.1.0";

// Error taxonomy. The CLI maps these onto its exit-code contract:
// data/validation problems exit 1, usage problems exit 2, transport exit 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public TransportError {
 public:
  using TransportError::TransportError;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace raml
