#pragma once

#include <stdexcept>
#include <string>

namespace kdl {

// Error taxonomy maps onto process exit codes: validation -> 2, numeric -> 3.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing forward cache, unreadable checkpoint, etc.
class StateError : public std::runtime_error {
public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kdl
