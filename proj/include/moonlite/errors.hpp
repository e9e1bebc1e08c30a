#pragma once

#include <stdexcept>
#include <string>

namespace moonlite {

// Base class for everything this library throws on purpose.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimensions of two objects that must agree do not.
struct shape_error : error {
  using error::error;
};

// An in-memory value is outside its domain (empty input, label not in {-1,+1}, ...).
struct value_error : error {
  using error::error;
};

// A configuration (flags, JSON config, layer dims, split fractions) is unusable.
struct config_error : error {
  using error::error;
};

// A file on disk does not conform to its format.
struct format_error : error {
  using error::error;
};

// A computation produced or received a non-finite number.
struct numeric_error : error {
  using error::error;
};

// An attribute has no samples of a class that the requested operation needs.
struct degenerate_error : error {
  using error::error;
};

}  // namespace moonlite
