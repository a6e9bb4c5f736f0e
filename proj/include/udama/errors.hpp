#pragma once

#include <stdexcept>
#include <string>

namespace udama {

// Bad arguments use std::invalid_argument directly. The two classes below
// cover the remaining failure kinds callers need to tell apart.

/// An operation was invoked on an object in the wrong lifecycle state
/// (e.g. corrupting labels that are already silver).
class InvalidState : public std::logic_error {
 public:
  explicit InvalidState(const std::string& what) : std::logic_error(what) {}
};

/// Input is well-formed but mathematically degenerate (zero variance).
class DegenerateInput : public std::domain_error {
 public:
  explicit DegenerateInput(const std::string& what) : std::domain_error(what) {}
};

}  // namespace udama
