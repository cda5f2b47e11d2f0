#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace omg {

// Shape or channel mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller broke an operation's precondition (non-scalar loss, empty mask, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf encountered where a finite value is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

// A visual prompt covers no feature cell after downsampling.
struct DegeneratePromptError : std::domain_error {
  using std::domain_error::domain_error;
};

// Instruction assembly failed (unbound <Region>, overlong sequence).
struct AssemblyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file. `line` is 1-based, 0 when not line oriented.
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line(line) {}
  std::size_t line;
};

// Synthetic data could not satisfy its invariants.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace omg
