#pragma once

#include <stdexcept>
#include <string>

namespace tolo {

/// Operand shapes do not satisfy an operation's precondition.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller-supplied value is outside the operation's domain.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the differentiation tape (non-scalar root, mixed tapes).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed serialized input: bad JSON, wrong arity, bad magic bytes.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or gradient became NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tolo
