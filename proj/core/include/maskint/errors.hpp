#pragma once

#include <stdexcept>
#include <string>

namespace maskint {

// Base of every contract failure raised by the library. Commands catch this
// at the top level and turn it into a one-line diagnostic.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents, indivisible windows, mismatched grids.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Token or class index outside its vocabulary.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation does not hold.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Not enough distinct data to fit the requested number of codebook entries.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Scalar argument outside the function's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed clip description (e.g. a shape that leaves the canvas).
class SpecError : public Error {
 public:
  using Error::Error;
};

// Keyframe gap longer than the model's trained clip length.
class SegmentationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during optimization.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

// Bad magic, truncated file, CRC mismatch, unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Unknown key or invalid value in a run configuration file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace maskint
