#pragma once

#include <stdexcept>
#include <string>

namespace pilotrep {

// Input file or JSON document could not be read into a valid structure.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally readable input that violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Requested combination of inputs cannot be serviced (missing table, bad pairing).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Conditional failure query at an age beyond every observed lifetime.
class NoSurvivorsError : public std::runtime_error {
 public:
  explicit NoSurvivorsError(const std::string& msg) : std::runtime_error(msg) {}
};

// No replica count can reach the availability target (per-replica failure rate is 1).
class UnsatisfiableError : public std::runtime_error {
 public:
  explicit UnsatisfiableError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pilotrep
