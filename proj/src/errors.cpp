#include "icl_lab/errors.hpp"

namespace icl {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Unlabelable: return "unlabelable_input";
    case ErrorKind::EnumerationCap: return "enumeration_cap";
    case ErrorKind::Singular: return "singular";
    case ErrorKind::ImpossiblePrompt: return "impossible_prompt";
    case ErrorKind::DegenerateKernel: return "degenerate_kernel_mass";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::AssumptionRefusal: return "assumption_refusal";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace icl
