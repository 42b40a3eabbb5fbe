#pragma once

#include <stdexcept>
#include <string>

namespace mtmarl {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension disagreement between two objects that must agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint, replay dump, or other binary payload.
class DecodeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or spec value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation called in a state where it is not allowed (e.g. appending to a
// closed episode, stepping a finished episode).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtmarl
