#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace icl {

enum class ErrorKind {
  Validation,        // malformed model, distribution or sequence
  Unlabelable,       // label distribution vanishes on the label set
  EnumerationCap,    // exact enumeration would exceed the configured cap
  Singular,          // unregularized inverse of a singular moment matrix
  ImpossiblePrompt,  // zero probability under the pre-training distribution
  DegenerateKernel,  // kernel weights sum to (numerically) zero
  Precondition,      // admissibility conditions of the threshold formula
  Schema,            // configuration document does not match the schema
  AssumptionRefusal, // experiment refused on a non-compliant model
  Io,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace icl
