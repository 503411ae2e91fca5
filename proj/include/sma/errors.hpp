#pragma once

#include <stdexcept>

namespace sma {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Size outside the representable range (0, or beyond the address space).
struct SizeError : Error {
  using Error::Error;
};

// Base address not aligned to the object's rounded size, or not canonical.
struct AlignmentError : Error {
  using Error::Error;
};

// A bounds check asked for something the bounds cannot answer
// (unsupported access width, or width larger than the object).
struct CheckConfigError : Error {
  using Error::Error;
};

struct FreeError : Error {
  using Error::Error;
};

struct OutOfMemoryError : Error {
  using Error::Error;
};

// Instrumentation applied to a value or program it cannot handle.
struct PassError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

} // namespace sma
